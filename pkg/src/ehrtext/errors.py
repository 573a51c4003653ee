"""Exception hierarchy shared across the pipeline."""


class EhrTextError(Exception):
    """Base class for all pipeline errors."""


class ManifestError(EhrTextError):
    pass


class MissingColumn(ManifestError):
    def __init__(self, table: str, column: str):
        super().__init__(f"table {table!r} is missing column {column!r}")
        self.table = table
        self.column = column


class UnknownLanguage(ManifestError):
    def __init__(self, language: str):
        super().__init__(f"unsupported language {language!r} (expected en, nl or de)")
        self.language = language


class DuplicateTable(ManifestError):
    def __init__(self, name: str):
        super().__init__(f"duplicate table entry {name!r}")
        self.name = name


class IngestError(EhrTextError):
    pass


class CsvParse(IngestError):
    def __init__(self, table: str, row: int, reason: str):
        super().__init__(f"table {table!r} row {row}: {reason}")
        self.table = table
        self.row = row


class ClockSkew(IngestError):
    def __init__(self, table: str, row: int, delta_minutes: float):
        super().__init__(
            f"table {table!r} row {row}: event {delta_minutes:g} min before admission"
        )
        self.table = table
        self.row = row
        self.delta_minutes = delta_minutes


class DuplicatePatient(EhrTextError):
    pass


class UnknownAnalyte(EhrTextError):
    pass


class NonFinite(EhrTextError):
    pass


class EmptyEvent(EhrTextError):
    pass


class NoEvents(EhrTextError):
    pass


class CorpusEmpty(EhrTextError):
    pass


class ServiceUnavailable(EhrTextError):
    pass


class MalformedResponse(EhrTextError):
    pass


class ConfigurationError(EhrTextError):
    pass


class DegenerateLabels(EhrTextError):
    """Metric undefined because only one class is present."""


class MissingCheckpoint(EhrTextError):
    pass


class Diverged(EhrTextError):
    pass
