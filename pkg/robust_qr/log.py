import logging
import logging.handlers
import os
import sys

from robust_qr.utils.paths import user_data_dir

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


def setup_logging(log_dir=None, log_level=logging.INFO):
    if log_dir is None:
        log_dir = os.getenv("ROBUST_QR_LOG_DIR") or str(user_data_dir() / "logs")

    if not os.path.exists(log_dir):
        try:
            os.makedirs(log_dir, exist_ok=True)
        except OSError:
            log_dir = "."  # Log to current dir as last resort

    log_file = os.path.join(log_dir, "robustqr.log")

    formatter = logging.Formatter(LOG_FORMAT)

    logger = logging.getLogger()
    logger.setLevel(log_level)

    # Calling twice (e.g. cli tests) must not duplicate every line.
    for existing in list(logger.handlers):
        if getattr(existing, "_robust_qr", False):
            logger.removeHandler(existing)
            existing.close()

    handler = logging.handlers.RotatingFileHandler(
        log_file, maxBytes=1 * 1024 * 1024, backupCount=5, encoding="utf-8"
    )
    handler.setFormatter(formatter)
    handler._robust_qr = True
    logger.addHandler(handler)

    # stdout is kept for --print-config and summary tables
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    console_handler._robust_qr = True
    logger.addHandler(console_handler)

    logging.info("--- Robust QR started ---")
    logging.info(f"Logging initialized. Log file: {log_file}")

    return log_dir
