"""Run logging; verbosity comes from the HEATDET_VERBOSITY environment variable."""
import logging
import os

ENV_VAR = "HEATDET_VERBOSITY"
LEVELS = {"quiet": logging.WARNING, "normal": logging.INFO, "debug": logging.DEBUG}


def verbosity():
    value = os.environ.get(ENV_VAR, "normal").strip().lower()
    if value not in LEVELS:
        raise ValueError(f"{ENV_VAR} must be one of {sorted(LEVELS)}, got {value!r}")
    return value


def get_logger(log_path=None):
    """Console output at the chosen verbosity; the run log file always gets everything."""
    logger = logging.getLogger("heatdet")
    logger.setLevel(logging.DEBUG)
    for h in list(logger.handlers):
        logger.removeHandler(h)
        h.close()
    console = logging.StreamHandler()
    console.setLevel(LEVELS[verbosity()])
    console.setFormatter(logging.Formatter("%(message)s"))
    logger.addHandler(console)
    if log_path is not None:
        fh = logging.FileHandler(log_path, mode="a", encoding="utf-8")
        fh.setLevel(logging.DEBUG)
        fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        logger.addHandler(fh)
    logger.propagate = False
    return logger
