"""File emission helpers: atomic writes, CSV tables, MatrixMarket export."""

import csv
import io
import math
import os
import tempfile
from pathlib import Path


def atomic_write_text(path, text):
    """Write ``text`` to ``path`` via a temporary file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def paper_sci(value, digits=6):
    """Format like ``1.65607(-3)``; blank for None, ``divergence`` for NaN."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if not math.isfinite(value):
        return "divergence"
    if value == 0:
        return "0"
    exp = math.floor(math.log10(abs(value)))
    mant = value / 10 ** exp
    if round(abs(mant), digits - 1) >= 10:
        mant /= 10
        exp += 1
    body = f"{mant:.{digits - 1}f}"
    if exp == 0:
        return body
    return f"{body}({exp:+d})" if exp > 0 else f"{body}({exp})"


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    atomic_write_text(path, buf.getvalue())


def write_matrix_market(path, matrix, comment=""):
    import scipy.io

    buf = io.BytesIO()
    scipy.io.mmwrite(buf, matrix, comment=comment)
    atomic_write_text(path, buf.getvalue().decode())
