import json
import logging
import math
import os

import numpy as np
import pandas as pd

from utils.errors import ReportWriteError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FORMATS = ('json', 'csv')

# Literal rendering of not-computable cells in CSV reports
NA = 'NA'


def _round(value):
    if math.isnan(value):
        return None
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return float(f'{value:.6g}')


def to_plain(obj):
    """
    Recursively convert reports, numpy values and tuples into JSON-ready data

    Floats keep 6 significant digits; NaN becomes None and infinities the strings 'inf' / '-inf'.
    """
    if hasattr(obj, 'to_dict'):
        return to_plain(obj.to_dict())
    if hasattr(obj, 'to_row'):
        return to_plain(obj.to_row())
    if isinstance(obj, dict):
        return {str(key): to_plain(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return [to_plain(value) for value in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _round(float(obj))
    return obj


def _rows(obj):
    if isinstance(obj, pd.DataFrame):
        return obj
    rows = [to_plain(row) for row in obj]
    if not rows:
        return pd.DataFrame()
    return pd.DataFrame(rows, columns=list(rows[0].keys()))


def write_report(obj, path, fmt=None):
    """
    Write a report object deterministically

    Args:
        obj: Report (anything with to_dict), dict, or list of rows for CSV
        path: Destination file; parent directories are created
        fmt: 'json' or 'csv' (defaults to the file suffix)

    Returns:
        str: The path written
    """
    fmt = fmt or os.path.splitext(str(path))[1].lstrip('.').lower()
    if fmt not in FORMATS:
        raise ReportWriteError(f'unsupported report format {fmt!r} for {path}')

    try:
        directory = os.path.dirname(str(path))
        if directory:
            os.makedirs(directory, exist_ok=True)

        if fmt == 'json':
            payload = to_plain(obj)
            if not isinstance(payload, dict):
                payload = {'rows': payload}
            payload = {'schema_version': SCHEMA_VERSION, **{k: v for k, v in payload.items() if k != 'schema_version'}}
            with open(path, 'w', encoding='utf-8', newline='\n') as handle:
                handle.write(json.dumps(payload, indent=2, allow_nan=False))
                handle.write('\n')
        else:
            frame = _rows(obj)
            frame.to_csv(path, index=False, na_rep=NA, float_format='%.6g', lineterminator='\n')
    except OSError as e:
        raise ReportWriteError(f'cannot write {path}: {e.strerror or e}')

    logger.debug('Wrote %s report %s', fmt, path)
    return str(path)
