"""
Database operations for the FedIN run registry
"""
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from sqlalchemy.orm import Session

from database.models import CheckpointRecord, ExperimentRun, RoundRecord, get_session


class DatabaseOperations:
    """Handles all run registry operations"""

    def __init__(self, db_path: Optional[Path] = None):
        self.db_path = db_path
        self.session: Optional[Session] = None

    def __enter__(self):
        self.session = get_session(self.db_path)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        if self.session:
            self.session.close()

    # ExperimentRun operations
    def create_run(self, run_data: dict) -> ExperimentRun:
        """Create a new run record"""
        run = ExperimentRun(**run_data)
        self.session.add(run)
        self.session.commit()
        return run

    def update_run(self, run_id: int, update_data: dict):
        """Update run record"""
        run = self.session.get(ExperimentRun, run_id)
        if run:
            for key, value in update_data.items():
                setattr(run, key, value)
            self.session.commit()

    def complete_run(self, run_id: int, outcome: dict):
        """Mark run as completed"""
        self.update_run(run_id, {**outcome, 'status': 'completed', 'completed_at': datetime.utcnow()})

    def fail_run(self, run_id: int, error_message: str):
        """Mark run as failed"""
        self.update_run(run_id, {
            'status': 'failed',
            'error_message': error_message,
            'completed_at': datetime.utcnow(),
        })

    def get_run(self, run_id: int) -> Optional[ExperimentRun]:
        """Get run by ID"""
        return self.session.get(ExperimentRun, run_id)

    def get_recent_runs(self, limit: int = 10) -> List[ExperimentRun]:
        """Get recent runs, newest first"""
        return self.session.query(ExperimentRun).order_by(
            ExperimentRun.started_at.desc(), ExperimentRun.id.desc()
        ).limit(limit).all()

    def get_runs_by_config(self, config_hash: str) -> List[ExperimentRun]:
        """All runs of an identical configuration"""
        return self.session.query(ExperimentRun).filter_by(config_hash=config_hash).all()

    # RoundRecord operations
    def add_round(self, run_id: int, round_data: dict) -> RoundRecord:
        """Record one round's metrics"""
        record = RoundRecord(run_id=run_id, **round_data)
        self.session.add(record)
        self.session.commit()
        return record

    def get_rounds(self, run_id: int) -> List[RoundRecord]:
        """Rounds of a run in order"""
        return self.session.query(RoundRecord).filter_by(run_id=run_id).order_by(RoundRecord.round).all()

    # CheckpointRecord operations
    def add_checkpoint(self, run_id: int, checkpoint_data: dict) -> CheckpointRecord:
        """Record a saved checkpoint"""
        record = CheckpointRecord(run_id=run_id, **checkpoint_data)
        self.session.add(record)
        self.session.commit()
        return record

    def get_checkpoints(self, run_id: int) -> List[CheckpointRecord]:
        return self.session.query(CheckpointRecord).filter_by(run_id=run_id).order_by(
            CheckpointRecord.client_id).all()
