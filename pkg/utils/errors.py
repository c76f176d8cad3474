class ToolkitError(Exception):
    """Base class for every error the toolkit raises on purpose"""

    category = 'internal'
    exit_code = 1

    def __init__(self, message):
        super().__init__(message)
        self.message = message

    def to_dict(self):
        return {'error': self.message, 'category': self.category}


class ConfigError(ToolkitError):
    """Invalid configuration; carries every problem found, not just the first"""

    category = 'config'
    exit_code = 2

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__('; '.join(self.problems))

    def to_dict(self):
        return {'error': 'Invalid configuration', 'category': self.category, 'problems': self.problems}


class IngestionError(ToolkitError):
    """Malformed input data, located by file and line when known"""

    category = 'ingestion'
    exit_code = 3

    def __init__(self, message, path=None, line=None):
        self.path = str(path) if path is not None else None
        self.line = line
        self.detail = message
        location = ''
        if self.path is not None and line is not None:
            location = f'{self.path}:{line}: '
        elif self.path is not None:
            location = f'{self.path}: '
        elif line is not None:
            location = f'line {line}: '
        super().__init__(location + message)


class DataError(ToolkitError):
    """Well-formed data that cannot support the requested analysis"""

    category = 'data'
    exit_code = 4


class MissingTruthError(DataError):
    """Ground truth is required by an operation but absent"""

    def __init__(self, operation, missing=None):
        detail = f' ({missing} tasks without truth)' if missing else ''
        super().__init__(f'{operation} requires ground truth for every task{detail}')


class TrainingError(ToolkitError):
    """A model cannot be fit to the given data"""

    category = 'numerical'
    exit_code = 5


class ReportWriteError(ToolkitError):
    """A report or dataset file could not be written"""

    category = 'output'
    exit_code = 6
