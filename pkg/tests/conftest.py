import sys
from pathlib import Path

# frozen oracle values live next to the tests
sys.path.insert(0, str(Path(__file__).resolve().parent))

from hypothesis import settings  # noqa: E402

# reproducible property runs; no example database on disk
settings.register_profile("pelab", derandomize=True, database=None)
settings.load_profile("pelab")
