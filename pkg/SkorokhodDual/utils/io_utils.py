import csv
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union


def atomic_write_text(path: Union[str, Path], text: str):
    """
    Write a text file atomically: the content goes to a temporary file of the same folder which then replaces the
    target, so readers never see a partially written file

    :param path: destination of the file
    :type path: Union[str, Path]
    :param text: content to write
    :type text: str
    :return: None
    :rtype: None
    """
    path = Path(path)
    os.makedirs(path.parent, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def to_jsonable(obj: Any) -> Any:
    """
    Convert numpy scalars / arrays, tuples and non finite floats into plain JSON values
    (non finite floats become strings 'inf', '-inf', 'nan')
    """
    if hasattr(obj, 'tolist') and not isinstance(obj, (str, bytes)):
        obj = obj.tolist()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def dumps_canonical(obj: Any) -> str:
    """
    Deterministic JSON serialization: sorted keys, fixed separators and indentation
    """
    return json.dumps(to_jsonable(obj), sort_keys=True, indent=2, separators=(',', ': '))


def write_json(path: Union[str, Path], obj: Any):
    atomic_write_text(path, dumps_canonical(obj) + "\n")


def sha256_of(obj: Any) -> str:
    """
    Hash of the canonical, compact JSON form of an object
    """
    payload = json.dumps(to_jsonable(obj), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()


def write_csv(path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]):
    """
    Write a CSV artifact with a header line, atomically

    :param path: destination of the file
    :type path: Union[str, Path]
    :param header: names of the columns
    :type header: Sequence[str]
    :param rows: rows of values, floats are written with repr precision
    :type rows: Iterable[Sequence[Any]]
    :return: None
    :rtype: None
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])
    atomic_write_text(path, buffer.getvalue())


def read_csv_rows(path: Union[str, Path]) -> List[List[str]]:
    """
    Read a CSV file and return its rows without the header line
    """
    with open(path, encoding='utf-8', newline='') as f:
        rows = list(csv.reader(f))
    return rows[1:]
