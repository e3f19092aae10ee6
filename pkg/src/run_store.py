from sqlalchemy import create_engine, Column, Integer, String, Float, DateTime, Text
from sqlalchemy.orm import declarative_base, sessionmaker
from datetime import datetime
from config.config import DATABASE_URL, BASE_DIR
from typing import Optional, List
import hashlib
import json
import logging

logger = logging.getLogger(__name__)

Base = declarative_base()


class RunRecord(Base):
    __tablename__ = 'runs'

    id = Column(Integer, primary_key=True)
    command = Column(String, nullable=False)
    config_hash = Column(String(64), index=True)
    mu = Column(Float)
    status = Column(String, nullable=False)
    report_json = Column(Text)
    report_hash = Column(String(64))
    created_at = Column(DateTime, default=datetime.utcnow)


def config_hash(raw_config: dict) -> str:
    """SHA-256 of the canonical JSON form of a config document"""
    canonical = json.dumps(raw_config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


class RunStore:
    def __init__(self, database_url: Optional[str] = None):
        url = database_url or DATABASE_URL
        if url == DATABASE_URL and url.startswith('sqlite:///'):
            (BASE_DIR / 'data').mkdir(exist_ok=True)
        logger.info(f"Using run archive at: {url}")
        self.engine = create_engine(url)
        Base.metadata.create_all(self.engine)
        self.session = sessionmaker(bind=self.engine)()

    def save_run(self, command: str, raw_config: dict, status: str, mu: Optional[float] = None,
                 report: Optional[dict] = None) -> RunRecord:
        """Archive one CLI run"""
        try:
            if not command:
                raise ValueError("Run command must be a non-empty string")
            report_str = json.dumps(report, sort_keys=True) if report is not None else None
            record = RunRecord(
                command=command,
                config_hash=config_hash(raw_config),
                mu=float(mu) if mu is not None else None,
                status=status,
                report_json=report_str,
                report_hash=hashlib.sha256(report_str.encode('utf-8')).hexdigest() if report_str else None,
            )
            self.session.add(record)
            self.session.commit()
            logger.info(f"Saved {command} run ({status}) with config hash {record.config_hash[:12]}")
            return record
        except Exception as e:
            self.session.rollback()
            logger.error(f"Error saving {command} run: {str(e)}", exc_info=True)
            raise

    def get_latest_run(self, command: Optional[str] = None) -> Optional[RunRecord]:
        """Get the most recent run, optionally for one command"""
        try:
            query = self.session.query(RunRecord)
            if command:
                query = query.filter_by(command=command)
            return query.order_by(RunRecord.created_at.desc(), RunRecord.id.desc()).first()
        except Exception as e:
            logger.error(f"Error getting latest run: {str(e)}")
            return None

    def find_by_config_hash(self, digest: str) -> List[RunRecord]:
        """All runs made from the same config document, oldest first"""
        try:
            return self.session.query(RunRecord)\
                .filter(RunRecord.config_hash == digest)\
                .order_by(RunRecord.id)\
                .all()
        except Exception as e:
            logger.error(f"Error looking up runs for config {digest[:12]}: {str(e)}")
            return []

    def close(self):
        """Close the database session"""
        try:
            self.session.close()
        except Exception as e:
            logger.error(f"Error closing database session: {str(e)}")
