"""
Run Logger - Records solver runs to a JSON file
Tracks every Picard iteration of a solve for later analysis
"""
import json
import logging
from datetime import datetime
from typing import Dict, Optional

logger = logging.getLogger(__name__)


class RunLogger:
    """Logs solver iterations, optionally mirrored to a JSON file"""

    def __init__(self, log_file: Optional[str] = None):
        self.log_file = log_file
        self.logs = {
            'run_start_time': None,
            'problem_info': {},
            'iterations': []
        }

    def clear_log(self):
        """Start a fresh log"""
        self.logs = {
            'run_start_time': datetime.now().isoformat(),
            'problem_info': {},
            'iterations': []
        }
        self._save_to_file()

    def set_problem_info(self, name: str, mu: float, nu: float, dim: int, n: int):
        self.logs['problem_info'] = {
            'name': name,
            'mu': mu,
            'nu': nu,
            'gamma': mu + nu * (1 - mu),
            'dim': dim,
            'n': n,
        }
        self._save_to_file()

    def log_iteration(self, iteration: int, residual: float, ratio: Optional[float]):
        """
        Log one successive-approximation step

        Args:
            iteration: 1-based iteration number
            residual: weighted norm of u_{k+1} - u_k
            ratio: residual over the previous residual, None for the first step
        """
        self.logs['iterations'].append({
            'iteration': iteration,
            'timestamp': datetime.now().isoformat(),
            'residual': residual,
            'ratio': ratio,
        })
        self._save_to_file()

    def log_solve_end(self, report):
        self.logs['solve_end'] = {
            'timestamp': datetime.now().isoformat(),
            'iterations': report.iterations,
            'converged': report.converged,
            'measured_ratio': report.measured_ratio,
            'error_bound': report.error_bound,
        }
        self._save_to_file()
        logger.info("solve ended after %d iterations (converged=%s)", report.iterations, report.converged)

    def _save_to_file(self):
        if not self.log_file:
            return
        try:
            with open(self.log_file, 'w') as f:
                json.dump(self.logs, f, indent=2)
        except OSError as e:
            logger.error("could not save run log %s: %s", self.log_file, e)

    def get_iteration(self, iteration: int) -> Optional[Dict]:
        for entry in self.logs['iterations']:
            if entry['iteration'] == iteration:
                return entry
        return None
