import os
import random

import numpy as np
import torch
from dotenv import load_dotenv

from core.errors import ConfigurationError


def get_deterministic_mode() -> bool:
    """DARR_DETERMINISTIC=1 in the environment (or .env) forces float64 and deterministic kernels."""
    load_dotenv()

    value = os.getenv("DARR_DETERMINISTIC", "0").strip().lower()
    if value not in ("0", "1", "true", "false", "yes", "no", ""):
        raise ConfigurationError(f"DARR_DETERMINISTIC must be 0 or 1, got {value!r}")
    return value in ("1", "true", "yes")


def get_device() -> torch.device:
    load_dotenv()

    name = os.getenv("DARR_DEVICE", "cpu").strip() or "cpu"
    if name.startswith("cuda") and not torch.cuda.is_available():
        print(f"⚠️  DARR_DEVICE={name} requested but CUDA is unavailable, using cpu")
        return torch.device("cpu")
    try:
        return torch.device(name)
    except RuntimeError as e:
        raise ConfigurationError(f"DARR_DEVICE: invalid device {name!r}") from e


def resolve_dtype(precision: str) -> torch.dtype:
    if get_deterministic_mode():
        return torch.float64
    return {"float32": torch.float32, "float64": torch.float64}[precision]


def seed_everything(seed: int) -> np.random.Generator:
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)
    if get_deterministic_mode():
        torch.use_deterministic_algorithms(True, warn_only=True)
    return np.random.default_rng(seed)
