"""Cross-module error types. Module-specific errors live next to their module."""


class NotFound(Exception):
    """Requested id/key is unknown locally."""


class IntegrityError(Exception):
    """Stored or received bytes fail their integrity check."""


class StorageFull(Exception):
    """Store capacity exhausted."""


class PermissionDenied(Exception):
    """Caller is not allowed to perform the operation."""
