"""Exception taxonomy. Every error carries a short machine-parseable code
(used by the CLI as the ``error:<code>:`` prefix)."""


class PathmedError(Exception):
    """Base class for all package errors."""

    code = "error"


class SchemaError(PathmedError):
    """A required column is missing from the input file or config."""

    code = "schema"


class ParseError(PathmedError):
    """A cell or token could not be parsed as expected."""

    code = "parse"


class CodingError(PathmedError):
    """Treatment column contains a value outside the declared coding."""

    code = "coding"


class MissingDataError(PathmedError):
    """Input contains missing cells; no imputation is performed."""

    code = "missing"


class FormulaError(PathmedError):
    """A formula term does not resolve against the dataset."""

    code = "formula"


class DesignShapeError(PathmedError):
    """Design matrix columns do not match the model's coefficients."""

    code = "shape"


class SingularDesignError(PathmedError):
    """Design matrix is rank deficient on the weighted support."""

    code = "singular"


class ConvergenceError(PathmedError):
    """Iterative fit did not converge; carries the last iterate."""

    code = "convergence"

    def __init__(self, message, last_coef=None):
        super().__init__(message)
        self.last_coef = last_coef


class SeparationError(PathmedError):
    """Logistic/probit coefficients diverged (quasi-separation)."""

    code = "separation"


class StratumError(PathmedError):
    """A required treatment stratum is empty."""

    code = "stratum"


class DegenerateResponseError(PathmedError):
    """Binary response is constant; propensity fit is undefined."""

    code = "degenerate"


class PositivityError(PathmedError):
    """Fitted treatment probabilities leave [floor, 1 - floor]."""

    code = "positivity"


class PositivityWarning(UserWarning):
    """Simulation-mode counterpart of PositivityError."""


class WeightError(PathmedError):
    """A realized inverse-probability weight is non-finite."""

    code = "weight"


class ContractError(PathmedError):
    """Inputs violate an operation's contract (mismatched n, missing
    intercept, unsupported family for the requested mode, ...)."""

    code = "contract"


class TotalEffectZeroError(PathmedError):
    """Percent mediated is undefined when the total effect is zero."""

    code = "division"


class OracleError(PathmedError):
    """Ground-truth cross-check failed; downstream runs are blocked."""

    code = "oracle"


class InstabilityError(PathmedError):
    """Too many bootstrap/simulation replicates failed; carries partial
    results."""

    code = "instability"

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class ConfigError(PathmedError):
    """Run configuration is malformed or internally inconsistent."""

    code = "config"
