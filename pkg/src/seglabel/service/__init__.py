"""HTTP facade: dataset ingestion, sessions, prompts, jobs, reviews, export."""

from .app import create_app
from .storage import DataStore

__all__ = ["create_app", "DataStore"]
