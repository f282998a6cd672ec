"""Turn an effective sampling fraction into planned sample sizes."""

import math
import warnings
from dataclasses import dataclass

from ._validation import check_fraction
from .exceptions import ConfigError


@dataclass(frozen=True)
class DesignEffect:
    """Variance inflation of the actual design relative to simple random sampling."""

    deff: float
    source_label: str = ""

    def __post_init__(self):
        if not (self.deff > 0 and math.isfinite(self.deff)):
            raise ConfigError(f"design effect must be positive, got {self.deff}")
        if self.deff < 1:
            warnings.warn(f"design effect {self.deff} < 1 (plausible only for stratified designs)", UserWarning,
                          stacklevel=2)


def _total(pop):
    return pop.total if hasattr(pop, "total") else int(pop)


def fraction_to_ess(f, pop):
    """Effective sample size ``round(f * N)``; ``pop`` is a Population or a total."""
    f = check_fraction(f)
    return int(round(f * _total(pop)))


def ess_to_actual(ess, deff):
    """Actual sample size ``ceil(ess * DEFF)``, rounded up for planning."""
    if not ess > 0:
        raise ConfigError(f"ESS must be positive, got {ess}")
    d = deff.deff if isinstance(deff, DesignEffect) else float(deff)
    # round first so representation error (e.g. 1.1 * 100) cannot add a person
    return int(math.ceil(round(ess * d, 9)))
