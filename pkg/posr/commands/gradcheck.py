import logging
from typing import Dict, Optional

from posr.commands import EXIT_OK, EXIT_RUNTIME
from posr.services.gradcheck import format_gradcheck_report, run_gradcheck_suite
from posr.tensor import Primitive

logger = logging.getLogger(__name__)


def cmd_gradcheck(seed: int = 0, rule_overrides: Optional[Dict[str, Primitive]] = None) -> int:
    """Finite-difference check of every loss; nonzero exit when any case fails."""
    cases = run_gradcheck_suite(seed=seed, rule_overrides=rule_overrides)
    print(format_gradcheck_report(cases))
    failed = [case.name for case in cases if not case.report.passed]
    if failed:
        logger.error(f"❌ Gradient check failed for {failed}")
        return EXIT_RUNTIME
    return EXIT_OK
