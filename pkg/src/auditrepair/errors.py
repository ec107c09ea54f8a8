"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (1),
data problems (2) and infeasible interventions (3).
"""


class AuditRepairError(Exception):
    exit_code = 1


class ConfigError(AuditRepairError, ValueError):
    exit_code = 1


class DataError(AuditRepairError, ValueError):
    exit_code = 2


class InfeasibleError(AuditRepairError):
    exit_code = 3


# -- data ------------------------------------------------------------------

class MissingColumn(DataError):
    def __init__(self, column):
        super().__init__(f"missing required column {column!r}")
        self.column = column


class InvalidValue(DataError):
    def __init__(self, row, column, token):
        super().__init__(f"invalid value {token!r} in column {column!r} at row {row}")
        self.row = row
        self.column = column
        self.token = token


class EmptyFile(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TooFewRecords(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class SingleClass(DataError):
    pass


class EmptyScores(DataError):
    pass


class UndefinedFPR(DataError):
    pass


class SingleArm(DataError):
    pass


# -- training --------------------------------------------------------------

class NonFiniteLoss(AuditRepairError, ArithmeticError):
    exit_code = 2

    def __init__(self, epoch, loss):
        super().__init__(f"training loss became non-finite ({loss}) at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


# -- interventions ---------------------------------------------------------

class InfeasibleDelta(InfeasibleError):
    pass


class InfeasibleTarget(InfeasibleError):
    pass


class ExhaustedCandidates(InfeasibleError):
    def __init__(self, message, residual_gap):
        super().__init__(f"{message} (residual gap {residual_gap:.6f})")
        self.residual_gap = residual_gap
