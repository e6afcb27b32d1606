"""Exception types raised by the solvers and the measurement layer."""


class IntegrationFailure(RuntimeError):
    """Adaptive stepper could not proceed (step size underflow).

    Carries the time at which the controller gave up.
    """

    def __init__(self, t: float, message: str | None = None):
        self.t = t
        super().__init__(message or f"time integration failed at t={t:.6g}")

    def __reduce__(self):
        return (IntegrationFailure, (self.t,))


class PropagationFailure(RuntimeError):
    """Exponential propagator exceeded its substep budget."""


class IterationDivergence(RuntimeError):
    """Nonlinear sweep hit max_iter without meeting the tolerance.

    ``history`` holds the per-iteration error values observed so far.
    """

    def __init__(self, history: list[float]):
        self.history = list(history)
        super().__init__(
            f"no convergence after {len(history)} iterations "
            f"(last error {history[-1]:.3e})" if history else "no convergence"
        )

    def __reduce__(self):
        return (IterationDivergence, (self.history,))


class CollectiveFailure(RuntimeError):
    """A worker failed; the whole collective solve is aborted.

    ``worker`` is the failing rank, ``subproblem`` the (phase, index) label.
    """

    def __init__(self, worker: int, subproblem: str, cause: BaseException):
        self.worker = worker
        self.subproblem = subproblem
        self.cause = cause
        super().__init__(f"worker {worker} failed in {subproblem}: {cause}")


class PilotTooShort(RuntimeError):
    """Pilot run cannot be timed reliably; widen the pilot fraction."""


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""
