"""Exception hierarchy shared across the package.

The CLI maps these onto exit-code categories: configuration problems,
data/input problems, and everything else (runtime).
"""


class GraindetError(Exception):
    pass


class ConfigError(GraindetError):
    pass


class DataError(GraindetError):
    pass
