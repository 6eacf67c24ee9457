"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed or inconsistent input data (CLI exit code 2)."""


class LeakageError(RuntimeError):
    """A held-out test row reached a training-side stage."""

    def __init__(self, stage, uids):
        self.stage = stage
        self.uids = sorted(uids)
        super().__init__(
            "leakage: %d test row(s) reached stage %r (uids %s%s)"
            % (len(self.uids), stage, self.uids[:5],
               "..." if len(self.uids) > 5 else "")
        )


class TrainingError(RuntimeError):
    """Training diverged or was fed unusable data."""
