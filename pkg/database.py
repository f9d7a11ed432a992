"""
Optional run ledger: one row per command invocation

Enabled only when DATABASE_URL is set (any SQLAlchemy URL, e.g.
sqlite:///runs.db). Ledger failures are reported and never fail a command.
"""
import logging
import os
from datetime import datetime
from functools import lru_cache
from typing import Any, Dict, Optional

from dotenv import load_dotenv
from sqlalchemy import JSON, Column, DateTime, Float, Integer, String, Text, create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

load_dotenv()

logger = logging.getLogger(__name__)

Base = declarative_base()


class RunRecord(Base):
    """Outcome of one train/evaluate/tsoi/cells/inspect-cell/synth run"""
    __tablename__ = "run_records"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String, nullable=False, index=True)
    status = Column(String, default="completed")  # completed, failed
    seed = Column(Integer)

    config = Column(JSON)
    input_digests = Column(JSON)  # path -> SHA-256
    outputs = Column(JSON)

    wall_time_seconds = Column(Float)
    created_at = Column(DateTime, default=datetime.utcnow)
    error_message = Column(Text)


def database_url() -> Optional[str]:
    return os.getenv("DATABASE_URL") or None


@lru_cache(maxsize=None)
def get_engine(url: str) -> Engine:
    engine = create_engine(url)
    Base.metadata.create_all(bind=engine)
    return engine


def session_factory(url: str):
    return sessionmaker(autocommit=False, autoflush=False, bind=get_engine(url))


def _store(record: RunRecord, url: Optional[str]) -> bool:
    url = url or database_url()
    if url is None:
        return False
    try:
        SessionLocal = session_factory(url)
        with SessionLocal() as db:
            db.add(record)
            db.commit()
        return True
    except Exception as e:
        logger.warning("run ledger unavailable, continuing without database: %s", e)
        return False


def record_run(manifest: Dict[str, Any], url: Optional[str] = None) -> bool:
    """Store a successful run's manifest; returns whether a row was written"""
    return _store(RunRecord(
        command=manifest["command"],
        status="completed",
        seed=manifest.get("seed"),
        config=manifest.get("config"),
        input_digests=manifest.get("input_digests"),
        outputs=manifest.get("outputs"),
        wall_time_seconds=manifest.get("wall_time"),
    ), url)


def record_failure(command: str, error: BaseException, seed: Optional[int] = None,
                   config: Optional[Dict[str, Any]] = None, url: Optional[str] = None) -> bool:
    return _store(RunRecord(
        command=command,
        status="failed",
        seed=seed,
        config=config,
        error_message=f"{type(error).__name__}: {error}",
    ), url)
