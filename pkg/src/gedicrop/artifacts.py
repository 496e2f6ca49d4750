"""Atomic, deterministic artifact writing."""
import json
import os
import tempfile


def atomic_write(path, write, mode="w"):
    """Write through a temp file in the target directory, then rename."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, **({"encoding": "utf-8", "newline": ""} if "b" not in mode else {})) as f:
            write(f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj, f):
    f.write(json.dumps(obj, indent=2, sort_keys=True))
    f.write("\n")
