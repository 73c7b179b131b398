"""Exception hierarchy shared by all modules.

The CLI maps ``InputError`` and ``ConstraintError`` to distinct exit codes.
"""


class CfdmuxError(Exception):
    pass


class InputError(CfdmuxError, ValueError):
    """Malformed or missing input (files, arguments, scenario documents)."""


class TraceFormatError(InputError):
    def __init__(self, message, row=None, path=None):
        self.row = row
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ConstraintError(CfdmuxError, ValueError):
    """Inputs are well formed but violate a budget, quota or capacity."""
