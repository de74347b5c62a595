"""Fetch the ORL (AT&T) face database into a class-per-directory tree.

The 400 PGM images (40 subjects x 10) ship inside the ``nimfa`` wheel on PyPI,
so this only needs pip access:

    python3 scripts/fetch_orl.py /root/data/orl
"""

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

PREFIX = "nimfa/datasets/ORL_faces/"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("dest", type=Path, help="output directory (receives s1 ... s40)")
    parser.add_argument("--version", default="1.4.0", help="nimfa wheel version")
    args = parser.parse_args(argv)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "--only-binary=:all:",
                        f"nimfa=={args.version}", "-d", tmp], check=True)
        wheel, = Path(tmp).glob("nimfa-*.whl")
        count = 0
        with zipfile.ZipFile(wheel) as zf:
            for name in zf.namelist():
                if name.startswith(PREFIX) and name.endswith(".pgm"):
                    target = args.dest / name[len(PREFIX):]
                    target.parent.mkdir(parents=True, exist_ok=True)
                    target.write_bytes(zf.read(name))
                    count += 1
    print(f"wrote {count} images to {args.dest}")
    return 0 if count == 400 else 1


if __name__ == "__main__":
    sys.exit(main())
