class EnsembleMDPError(Exception):
    """
    Base class of the exceptions raised by EnsembleMDP.
    """
    pass


class DimensionError(EnsembleMDPError, ValueError):
    """
    Exception when arrays that must agree in shape do not.
    """
    pass


class StochasticityError(EnsembleMDPError, ValueError):
    """
    Exception when a transition matrix or an ensemble state
    is not stochastic within the requested tolerance.

    Attributes
    ----------
    report: StochasticityReport, optional
        The validation report describing the offending columns.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class SupportViolationError(EnsembleMDPError, ValueError):
    """
    Exception when a transition probability is positive
    where the natural transition matrix forbids the transition.
    """
    pass


class NonUniqueSteadyStateError(EnsembleMDPError):
    """
    Exception when the natural chain has more than one ergodic class,
    so the steady state is not unique.

    Attributes
    ----------
    dimension: int
        Dimension of the eigenvalue-1 eigenspace.
    """

    def __init__(self, message: str, dimension: int):
        super().__init__(message)
        self.dimension = dimension


class PenaltyVariantError(EnsembleMDPError, TypeError):
    """
    Exception when a solver receives a penalty schedule variant
    it cannot handle.
    """
    pass


class ConvergenceError(EnsembleMDPError):
    """
    Exception when an iterative solve does not reach its tolerance
    within the iteration budget.

    Attributes
    ----------
    residual: float
        The last residual.
    iterations: int
        The number of iterations performed.
    tau: int, optional
        Time step of the backward sweep, when known.
    alpha: int, optional
        Source state (column) of the failing solve, when known.
    """

    def __init__(
            self,
            message: str,
            residual: float,
            iterations: int,
            tau=None,
            alpha=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.tau = tau
        self.alpha = alpha


class InfeasibleTargetError(EnsembleMDPError):
    """
    Exception when a tracking target can not be a convex combination
    of the per-state consumptions.

    Attributes
    ----------
    t: int
        The time step (1..T) of the first violation.
    value: float
        The requested consumption s(t).
    bound: float
        The violated bound (min or max of epsilon).
    """

    def __init__(self, message: str, t: int, value: float, bound: float):
        super().__init__(message)
        self.t = t
        self.value = value
        self.bound = bound


class InvalidConfigError(EnsembleMDPError, ValueError):
    """
    Exception when a configuration object has invalid fields.
    """
    pass


class ProblemFileError(EnsembleMDPError):
    """
    Exception when a problem, signal or trajectory file can not be parsed.
    """
    pass
