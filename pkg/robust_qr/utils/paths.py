import os
import platform
from pathlib import Path

# Directory holding the robust_qr package: the repository root, or site-packages once installed.
APP_ROOT = Path(__file__).resolve().parents[2]


def get_resource_path(relative_path) -> Path:
    """Absolute path of a resource shipped with the package."""
    return APP_ROOT / relative_path


def user_data_dir() -> Path:
    """Per-user application data directory, following each platform's convention."""
    if platform.system() == "Windows":
        return Path(os.getenv("APPDATA", Path.home())) / "RobustQR"
    elif platform.system() == "Darwin":  # macOS
        return Path.home() / "Library" / "Application Support" / "RobustQR"
    else:  # Linux and other Unix-like systems
        return Path.home() / ".local" / "share" / "RobustQR"
