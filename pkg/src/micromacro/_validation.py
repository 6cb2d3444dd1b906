"""Input validation helpers shared by the estimators and the functional API."""
import numbers

import numpy as np


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`.

    Parameters
    ----------
    seed : None, int, numpy.random.SeedSequence or numpy.random.Generator
        ``None`` draws fresh OS entropy. Integers and seed sequences are
        expanded with the counter-based Philox bit generator so that
        replication streams spawned from one base seed never overlap.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.Philox(seed))
    if isinstance(seed, numbers.Integral):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    raise ValueError(f"{seed!r} cannot be used to seed a numpy Generator")


def check_positive(value, name, allow_inf=False):
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"{name} must be a positive real, got {value!r}") from None
    if not value > 0 or (not allow_inf and not np.isfinite(value)):
        raise ValueError(f"{name} must be a positive real, got {value!r}")
    return value


def check_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_state(x, dim, name="x"):
    """Return ``x`` as a fresh float64 vector of length ``dim``."""
    arr = np.array(x, dtype=np.float64).reshape(-1)
    if arr.shape[0] != dim:
        raise ValueError(f"{name} must have dimension {dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def check_samples(samples, name="samples"):
    arr = np.asarray(samples, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise ValueError(f"{name} must contain at least one value")
    return arr
