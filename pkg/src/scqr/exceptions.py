class DataError(ValueError):
    """Invalid or unusable input data."""


class NoEventsError(DataError):
    """No uncensored observation carries positive weight."""

    def __init__(self, msg="no events: every observation with positive weight is censored"):
        super().__init__(msg)


class NonConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap.

    Carries the last iterate and its stationarity measure so callers can
    inspect or report the failure.
    """

    def __init__(self, msg, beta=None, grad_norm=None, tau=None, n_iter=None):
        super().__init__(msg)
        self.beta = beta
        self.grad_norm = grad_norm
        self.tau = tau
        self.n_iter = n_iter
