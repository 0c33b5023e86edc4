"""
Database models for the FedIN run registry
"""
from datetime import datetime
from pathlib import Path
from typing import Dict, Optional

from sqlalchemy import (Column, DateTime, Float, ForeignKey, Index, Integer, String, Text,
                        create_engine)
from sqlalchemy.engine import Engine
from sqlalchemy.orm import declarative_base, sessionmaker

import config

Base = declarative_base()


class ExperimentRun(Base):
    """One invocation of run_experiment"""
    __tablename__ = 'experiment_runs'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_name = Column(String, nullable=False)
    mode = Column(String(40), nullable=False)
    seed = Column(Integer, nullable=False)
    num_clients = Column(Integer, nullable=False)
    num_rounds = Column(Integer, nullable=False)

    # Configuration snapshot
    config_json = Column(Text, nullable=False)
    config_hash = Column(String(64), nullable=False, index=True)  # SHA256 of config_json

    # Status
    status = Column(String(20), default='running')  # running, completed, failed
    started_at = Column(DateTime, default=datetime.utcnow)
    completed_at = Column(DateTime)
    duration_seconds = Column(Float)

    # Outcome
    final_mean_accuracy = Column(Float)
    best_round = Column(Integer)
    best_accuracy = Column(Float)
    csv_path = Column(String)
    error_message = Column(String)

    __table_args__ = (
        Index('idx_run_started', 'started_at'),
    )


class RoundRecord(Base):
    """Per-round metrics, including wall-clock time"""
    __tablename__ = 'round_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('experiment_runs.id'), nullable=False)
    round = Column(Integer, nullable=False)
    mean_accuracy = Column(Float, nullable=False)
    mean_local_loss = Column(Float)
    mean_in_loss = Column(Float)
    elapsed_seconds = Column(Float)

    __table_args__ = (
        Index('idx_round_run', 'run_id', 'round'),
    )


class CheckpointRecord(Base):
    """Final client checkpoint and its digest"""
    __tablename__ = 'checkpoint_records'

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey('experiment_runs.id'), nullable=False)
    client_id = Column(Integer, nullable=False)
    variant = Column(String(4), nullable=False)
    path = Column(String, nullable=False)
    sha256 = Column(String(64), nullable=False)
    created_at = Column(DateTime, default=datetime.utcnow)


_engines: Dict[str, Engine] = {}


def _engine(db_path: Optional[Path] = None) -> Engine:
    path = Path(db_path or config.DATABASE_PATH)
    key = str(path.resolve())
    if key not in _engines:
        path.parent.mkdir(parents=True, exist_ok=True)
        _engines[key] = create_engine(f'sqlite:///{path}', echo=False)
    return _engines[key]


# Database initialization
def init_database(db_path: Optional[Path] = None) -> Engine:
    """Initialize the database and create all tables"""
    engine = _engine(db_path)
    Base.metadata.create_all(engine)
    return engine


def get_session(db_path: Optional[Path] = None):
    """Get a database session"""
    SessionLocal = sessionmaker(bind=init_database(db_path), expire_on_commit=False)
    return SessionLocal()
