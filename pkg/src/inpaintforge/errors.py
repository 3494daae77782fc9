"""Exception types shared across the toolkit."""


class ForgeError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ForgeError):
    """A configuration file is missing, unreadable, or inconsistent."""


class RegistryError(ForgeError):
    """The removability registry violates its consistency rules."""


class ContractError(ForgeError):
    """A caller violated a documented precondition."""


class MaskContractError(ForgeError):
    """A mask candidate file does not satisfy the candidate contract."""


class CandidateManifestMissing(ForgeError):
    """No candidate manifest exists for a requested image."""


class InpaintUnavailable(ForgeError):
    """The inpainting client could not produce a target image."""


class MetricError(ForgeError):
    """Metric inputs are empty, malformed, or numerically unusable."""
