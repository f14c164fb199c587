# common.py — MIT License
# See LICENSE.txt for full terms.

"""
Common elements for the genotype model: custom exceptions and shared constants.
"""
import logging

logger = logging.getLogger(__name__)

# --- Custom Exceptions ---
class PedCallError(Exception):
    """Base class for exceptions raised by pedhapcall."""
    pass

class PedCallValidationError(PedCallError, ValueError):
    """Raised when an input violates a documented precondition."""
    pass

class PedCallCapacityError(PedCallError):
    """Raised when an enumeration would exceed a configured size cap."""
    pass

class PedCallFormatError(PedCallValidationError):
    """Raised for malformed input files. Carries the location of the problem."""

    def __init__(self, message, path=None, line=None, column=None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None: where.append(str(path))
        if line is not None: where.append(f"line {line}")
        if column is not None: where.append(f"column '{column}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)

# --- Shared Constants ---
SIMPLEX_TOLERANCE = 1e-12
# Upper bound (exclusive) on per-locus read error rates.
MAX_ERROR_RATE = 0.5
DEFAULT_CONFIGURATION_CAP = 10**7
# Largest number of loci called jointly as diploid haplotypes.
DEFAULT_MAX_HAPLOTYPE_LOCI = 3
