# src/bootstrap.py
"""
System bootstrap for Rosa.

Includes:
- Startup banner: project version and model format from versions.json.
- Torch runtime: thread count and deterministic kernels for reproducible runs.
- Model integrity: checks that the trained fold models a stage needs exist.

Call print_startup_banner() and configure_torch() at process start.
"""
import json
import logging
from pathlib import Path

logger = logging.getLogger(__name__)

_PROJECT_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_MODEL_FORMAT = "rosa-model/1"


def load_versions() -> dict:
    """Load the project manifest from versions.json at the repo root."""
    path = _PROJECT_ROOT / "versions.json"
    try:
        with path.open("r", encoding="utf-8") as f:
            return json.load(f)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        logger.warning("Could not load versions.json: %s", exc)
        return {}


def model_format(versions: dict | None = None) -> str:
    """Version tag written into (and required from) every model.bin."""
    if versions is None:
        versions = load_versions()
    return str(versions.get("model_format", DEFAULT_MODEL_FORMAT))


def print_startup_banner(versions: dict) -> None:
    project = versions.get("project", "Rosa")
    version = versions.get("version", "unknown")

    print(f"\n{'─' * 52}")
    print(f"  {project} v{version}  |  model format {model_format(versions)}")
    print(f"{'─' * 52}")
    print()


def configure_torch(threads: int = 1, deterministic: bool = True) -> None:
    """Pin intra-op threads and request deterministic kernels.

    Epoch-loss traces are only bit-identical across runs for a fixed thread
    count, so training stages default to one thread.
    """
    import torch

    torch.set_num_threads(max(int(threads), 1))
    torch.use_deterministic_algorithms(deterministic)
    logger.info("Torch %s: %d thread(s), deterministic=%s", torch.__version__, torch.get_num_threads(), deterministic)


def check_model_integrity(models_dir, fold_names) -> list[str]:
    """Return the fold models missing under *models_dir* and log a warning for them."""
    models_dir = Path(models_dir)
    missing = [name for name in fold_names if not (models_dir / name / "model.bin").exists()]
    if missing:
        logger.warning("Missing trained models: %s", ", ".join(missing))
    else:
        logger.info("Model integrity check passed (%d model(s)).", len(fold_names))
    return missing
