import sys

from robust_qr.cli import main


if __name__ == "__main__":
    sys.exit(main())
