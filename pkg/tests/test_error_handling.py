import pytest
import numpy as np
from unittest.mock import patch
from src.cli import EXIT_NUMERIC, main
from src.domain_grid import Box, build_domain
from src.errors import (ChainStallError, ConfigError, DomainConstructionError, HamiltonianDomainError, ReportError,
                        SupnormError, UnboundedProblemError, UnreachableTargetError)
from src.solver import solve_mu
from src.hamiltonian import IsotropicPower

def test_hierarchy():
    """Test that every solver error can be caught as SupnormError"""
    for cls in (HamiltonianDomainError, DomainConstructionError, UnreachableTargetError, UnboundedProblemError,
                ChainStallError, ReportError, ConfigError):
        assert issubclass(cls, SupnormError)

def test_config_error_key_path():
    """Test that config errors name the offending key"""
    err = ConfigError("must be positive, got -1", key_path='domain.h')
    assert str(err) == "domain.h: must be positive, got -1"
    assert err.key_path == 'domain.h'

def test_config_error_position():
    """Test that JSON syntax errors carry line and column"""
    err = ConfigError("Expecting value", line=3, column=7)
    assert str(err) == "line 3, column 7: Expecting value"
    assert (err.line, err.column) == (3, 7)

def test_chain_stall_carries_node_and_gap():
    """Test that a stalled chain reports where it stopped"""
    err = ChainStallError("stalled", node=12, gap=-0.2)
    assert (err.node, err.gap) == (12, -0.2)
    assert "stalled" in str(err)

def test_unbounded_problem():
    """Test that a hopeless lambda cap raises UnboundedProblemError"""
    dom = build_domain(Box(), 0.25)
    g = dom.coords()[:, 0] * 100.0
    with pytest.raises(UnboundedProblemError) as exc_info:
        solve_mu(IsotropicPower(1.0), dom, g, lambda_cap=10.0)

    assert "lambda_cap=10" in str(exc_info.value)

def test_numeric_errors_exit_3(tmp_path):
    """Test that numerical failures inside a command map to exit code 3"""
    (tmp_path / 'run.json').write_text('{"domain": {"h": 0.25}}')
    with patch('src.cli.solve_mu') as mock_solve:
        # Mock a solver failure deep inside the pipeline
        mock_solve.side_effect = UnreachableTargetError("Node 7 is at infinite distance")

        assert main(['solve', '--config', str(tmp_path / 'run.json'),
                     '--out-prefix', str(tmp_path / 'run')]) == EXIT_NUMERIC

def test_hamiltonian_domain_error():
    """Test that H refuses points where the weight vanishes"""
    from src.hamiltonian import BoundaryDistanceWeight, WeightedIsotropic
    spec = WeightedIsotropic(BoundaryDistanceWeight(Box()))
    with pytest.raises(HamiltonianDomainError):
        spec.h(np.array([[0.0, 0.0]]), np.array([[1.0, 0.0]]))
