"""Exception types shared by the library and the CLI.

Every `ProbeError` carries the process exit code the CLI reports for it.
"""


class ProbeError(Exception):
    exit_code = 1


# --- CLI-facing failures ---
class ConfigError(ProbeError):
    exit_code = 2

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class MalformedCsv(ProbeError):
    exit_code = 2

    def __init__(self, line, message):
        self.line = line
        super().__init__(f"line {line}: {message}")


class DivergedTraining(ProbeError):
    exit_code = 3


class ArchiveCorrupt(ProbeError):
    exit_code = 4


class NoProbeableTensors(ProbeError):
    exit_code = 5


class MalformedTable(ProbeError):
    exit_code = 6


class ConstantInput(MalformedTable):
    """Correlation is undefined for a constant vector."""


# --- Numerical failures ---
class NonFiniteInput(ProbeError, ValueError):
    pass


class NonConvergence(ProbeError):
    pass


class DegenerateInput(ProbeError):
    pass


class EmptyFactorization(ProbeError):
    pass


class EmptyNetwork(ProbeError):
    pass


class UnmeasurableLayer(ProbeError):
    def __init__(self, name, cause):
        self.name = name
        self.cause = cause
        super().__init__(f"layer {name!r} is unmeasurable: {cause}")


class NonFiniteGradient(DivergedTraining):
    pass


class LayerCountMismatch(ProbeError):
    pass


class DegenerateDenominator(ProbeError):
    pass
