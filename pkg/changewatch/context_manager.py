"""
Context manager that times a CLI run and writes its manifest on the way out.
"""
import platform
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional

from . import __version__
from .logger import get_logger
from .utils import ensure_dir, write_json

logger = get_logger(__name__)

MANIFEST_NAME = "manifest.json"
_TRACKED_PACKAGES = ("numpy", "scipy", "pandas", "networkx", "pydantic", "pydantic-settings")


@dataclass
class RunManifest:
    """Record of one CLI invocation."""
    command: str
    config: Dict[str, Any]
    seed: Optional[int]
    versions: Dict[str, str] = field(default_factory=dict)
    started_at: str = ""
    timings: Dict[str, float] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)
    status: str = "running"
    error: Optional[str] = None

    def add_output(self, path: Path) -> None:
        self.outputs.append(str(path))

    def time(self, label: str, seconds: float) -> None:
        self.timings[label] = round(seconds, 3)


def collect_versions() -> Dict[str, str]:
    versions = {"changewatch": __version__, "python": platform.python_version()}
    for name in _TRACKED_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions


@contextmanager
def run_context(command: str, out_dir: Path, config: Dict[str, Any], seed: Optional[int]) -> Iterator[RunManifest]:
    """Yield a manifest for the run; exactly one manifest file is written per run."""
    out_dir = ensure_dir(Path(out_dir))
    manifest = RunManifest(
        command=command,
        config=config,
        seed=seed,
        versions=collect_versions(),
        started_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    start_time = time.time()
    try:
        yield manifest
        manifest.status = "ok"
    except Exception as e:
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        logger.error(f"Run '{command}' failed: {e}")
        raise
    finally:
        manifest.time("total", time.time() - start_time)
        try:
            write_json(out_dir / MANIFEST_NAME, asdict(manifest))
        except OSError as e:
            logger.error(f"Error writing manifest: {e}")
