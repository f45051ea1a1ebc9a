"""Exception hierarchy shared by every gardenctl module.

Each class carries an ``exit_code`` used by the command line front end:
2 for user errors (bad input, missing packages, stale caches) and 1 for
aborted builds and isolation violations.
"""


class GardenError(Exception):
    exit_code = 2


# hash-names

class MalformedHashName(GardenError, ValueError):
    pass


class WrongLength(GardenError, ValueError):
    pass


# recipes and treetops

class RecipeSyntaxError(GardenError):
    def __init__(self, message, line=0, column=0, filename=None):
        self.line = line
        self.column = column
        self.filename = filename
        where = f"{filename or '<recipe>'}:{line}:{column}"
        super().__init__(f"{where}: {message}")


class DuplicateKey(RecipeSyntaxError):
    pass


class UnknownKey(RecipeSyntaxError):
    pass


class ExportOfUnpinnedSymbol(GardenError):
    pass


class UnpinnedSymbol(GardenError):
    pass


class TreetopRequired(GardenError):
    pass


class InvalidRecipe(GardenError):
    pass


# store

class PackageNotFound(GardenError):
    def __init__(self, hashname, roots=(), referrer=None):
        self.hashname = str(hashname)
        self.roots = list(roots)
        self.referrer = referrer
        msg = f"package {self.hashname} not found"
        if referrer:
            msg += f" (referenced by {referrer})"
        if self.roots:
            msg += " in storepath " + ":".join(str(r) for r in self.roots)
        super().__init__(msg)


class CrossDeviceStaging(GardenError):
    exit_code = 1


class CorruptExisting(GardenError):
    exit_code = 1


class CanonicalUnwritable(GardenError):
    pass


class ConfigError(GardenError):
    pass


# environments

class CircularDependency(GardenError):
    exit_code = 1

    def __init__(self, cycle):
        self.cycle = [str(h) for h in cycle]
        super().__init__("circular DEPS: " + " -> ".join(self.cycle))


class UnknownVariable(GardenError):
    pass


class CacheMissing(GardenError):
    pass


class CacheStale(GardenError):
    pass


# isolation

class MalformedElf(GardenError):
    exit_code = 1

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (at offset {offset:#x})")


class UnsupportedElfClass(GardenError):
    exit_code = 1


# builder

class DirtyWorktree(GardenError):
    def __init__(self, paths):
        self.paths = list(paths)
        super().__init__(
            "refusing to build: uncommitted changes in " + ", ".join(self.paths)
        )


class NotARepository(GardenError):
    pass


class UnknownRevspec(GardenError):
    pass


class HelperFailed(GardenError):
    exit_code = 1

    def __init__(self, status, log):
        self.status = status
        self.log = log
        super().__init__(f"garden-helper exited with status {status}")


class OutUnpopulated(GardenError):
    exit_code = 1


class IsolationViolation(GardenError):
    exit_code = 1

    def __init__(self, report):
        self.report = report
        bad = [r.file for r in report.dirty_files]
        super().__init__("isolation check failed for " + ", ".join(map(str, bad)))


class InvalidRequest(GardenError):
    pass


# closure / export

class CorruptReferences(GardenError):
    exit_code = 1


class DestUnwritable(GardenError):
    pass


class CentralUnconfigured(GardenError):
    pass


# cli

class TargetExists(GardenError):
    pass
