"""
Centralized artifact path management.
Every subcommand writes around a single output stem:
  {stem}.json            (JSON contract)
  {stem}.csv             (per-unit or per-delta sidecar)
  {stem}.oracle.json     (simulate only)
  {stem}.nuisances.csv   (fit only)
  {stem}.qini.csv        (qini only, plot-ready)
"""

import os
from typing import Optional

from config import settings


class ArtifactPaths:
    def __init__(self, out: Optional[str]):
        self.out = out
        if out is None:
            self.stem = None
        else:
            root, ext = os.path.splitext(os.path.abspath(out))
            self.stem = root if ext.lower() in (".json", ".csv") else os.path.abspath(out)

    @classmethod
    def for_simulation(cls, scenario: str, n: int, seed: int) -> "ArtifactPaths":
        """Default stem {OUTPUT_DIR}/{scenario}_n{n}_seed{seed}."""
        return cls(os.path.join(settings.OUTPUT_DIR, f"{scenario}_n{n}_seed{seed}"))

    @property
    def enabled(self) -> bool:
        return self.stem is not None

    # --- Properties ---

    @property
    def json_file(self):
        return f"{self.stem}.json"

    @property
    def csv_file(self):
        return f"{self.stem}.csv"

    @property
    def oracle_file(self):
        return f"{self.stem}.oracle.json"

    @property
    def nuisances_file(self):
        return f"{self.stem}.nuisances.csv"

    @property
    def qini_file(self):
        return f"{self.stem}.qini.csv"

    # --- Directory management ---

    def ensure_dirs(self):
        """Create the parent directory of the stem."""
        if not self.enabled:
            return None
        parent = os.path.dirname(self.stem)
        os.makedirs(parent, exist_ok=True)
        return parent
