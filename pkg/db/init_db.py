"""
Database initialization utilities for the run registry.

Provides functions for:
- Resolving the registry URL (argument, environment, default)
- Creating the engine and tables
- Getting database sessions
"""

import logging
import os
from pathlib import Path
from typing import Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, sessionmaker
from sqlalchemy.pool import StaticPool

from .base import Base
from .models import EvalResult, ExperimentRun  # noqa: F401 - ensure models are registered

logger = logging.getLogger(__name__)

DEFAULT_DB_URL = "sqlite:///data/boxrec.db"
DB_URL_ENV_VAR = "BOXREC_DB_URL"

_engines: dict[str, Engine] = {}


def get_db_url(db_url: Optional[str] = None) -> str:
    """
    Get the database URL.

    Priority:
    1. Explicit db_url argument (``data.db_url``)
    2. BOXREC_DB_URL environment variable
    3. Default SQLite path
    """
    if db_url:
        return db_url
    return os.getenv(DB_URL_ENV_VAR, DEFAULT_DB_URL)


def _is_memory(url: str) -> bool:
    return url in ("sqlite://", "sqlite:///:memory:")


def get_engine(db_url: Optional[str] = None) -> Engine:
    """
    Engine for the resolved URL, created once per URL.

    In-memory SQLite shares a single connection so that tables created by
    ``init_db`` stay visible to later sessions.
    """
    url = get_db_url(db_url)
    if url not in _engines:
        if _is_memory(url):
            _engines[url] = create_engine(
                url, echo=False, connect_args={"check_same_thread": False}, poolclass=StaticPool
            )
        else:
            _engines[url] = create_engine(url, echo=False)
    return _engines[url]


def init_db(db_url: Optional[str] = None) -> Engine:
    """
    Initialize the database, creating tables if they don't exist.

    For file-backed SQLite, also ensures the parent directory exists.
    """
    url = get_db_url(db_url)
    if url.startswith("sqlite:///") and not _is_memory(url):
        db_dir = Path(url.replace("sqlite:///", "")).parent
        db_dir.mkdir(parents=True, exist_ok=True)

    engine = get_engine(url)
    Base.metadata.create_all(engine)
    logger.debug(f"Registry ready: {url}")
    return engine


def get_session(db_url: Optional[str] = None) -> Session:
    """New session bound to the (initialized) registry."""
    SessionLocal = sessionmaker(bind=init_db(db_url))
    return SessionLocal()


if __name__ == "__main__":
    # Allow running as script: python -m db.init_db
    logging.basicConfig(level=logging.INFO)
    init_db()
    print(f"Database initialized: {get_db_url()}")
