import pytest

from src.run_store import RunRecord, RunStore, config_hash


@pytest.fixture
def store(tmp_path):
    store = RunStore(f"sqlite:///{tmp_path / 'runs.db'}")
    yield store
    store.close()


def test_config_hash_ignores_key_order():
    first = config_hash({'domain': {'h': 0.1, 'stencil_k': 16}, 'boundary': {'kind': 'linear'}})
    second = config_hash({'boundary': {'kind': 'linear'}, 'domain': {'stencil_k': 16, 'h': 0.1}})
    assert first == second
    assert len(first) == 64
    assert config_hash({'domain': {'h': 0.2}}) != config_hash({'domain': {'h': 0.1}})


def test_save_and_fetch_latest(store):
    store.save_run('solve', {'domain': {'h': 0.1}}, 'ok', mu=1.25)
    store.save_run('verify', {'domain': {'h': 0.1}}, 'failed', report={'passed': False, 'n_failed': 2})
    latest = store.get_latest_run()
    assert latest.command == 'verify'
    assert latest.status == 'failed'
    assert latest.mu is None
    assert latest.report_json == '{"n_failed": 2, "passed": false}'
    assert len(latest.report_hash) == 64

    solve = store.get_latest_run('solve')
    assert solve.mu == pytest.approx(1.25)
    assert solve.report_json is None


def test_find_by_config_hash(store):
    doc = {'domain': {'h': 0.05}}
    store.save_run('solve', doc, 'ok', mu=2.0)
    store.save_run('attain', {'domain': {'h': 0.1}}, 'ok')
    store.save_run('pointwise', doc, 'ok')
    runs = store.find_by_config_hash(config_hash(doc))
    assert [r.command for r in runs] == ['solve', 'pointwise']
    assert store.find_by_config_hash('0' * 64) == []


def test_empty_command_rejected(store):
    with pytest.raises(ValueError):
        store.save_run('', {}, 'ok')
    assert store.get_latest_run() is None


def test_records_persist_across_sessions(tmp_path):
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    first = RunStore(url)
    first.save_run('solve', {}, 'ok', mu=0.5)
    first.close()
    second = RunStore(url)
    assert isinstance(second.get_latest_run(), RunRecord)
    assert second.get_latest_run().mu == 0.5
    second.close()
