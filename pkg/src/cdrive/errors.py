"""Error taxonomy shared across the package.

DomainError marks inputs outside an operation's physical domain (energy below
the potential floor, point outside the box, non-confining potential, ...).
NumericalError marks a solver or self-check failure on valid inputs.
ConfigError marks an invalid experiment configuration; the CLI maps it to
exit code 2 and NumericalError to exit code 3.
"""


class DomainError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass
