#!/usr/bin/env python3
# Copyright 2023 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command line entry point.

`align`, `fit` and `evaluate` act on the operating point made of the first value of
every grid and hand their state to each other through the artifact store; `sweep` runs
the three stages over the whole grid in one process.
"""
import argparse
import logging
import sys
from typing import Callable, Dict, List, Optional

from experiment import Estimator, ExperimentConfig, load_config
from mvlr.errors import InvalidInputError, MvlrError
from mvlr.store import (
    ArtifactStore,
    config_hash,
    pack_beam_lists,
    pack_models,
    unpack_beam_lists,
    unpack_models,
)
from sweep import (
    GridPoint,
    align_point,
    evaluate_point,
    fit_point,
    grid_points,
    run_sweep,
    setup_point,
    write_csv,
)

VERBS = ("align", "fit", "evaluate", "sweep", "show-config")
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse the verb and the flags that override configuration options."""
    parser = argparse.ArgumentParser(
        prog="mvlr", description="Multi-vehicular low-rank channel estimation simulator"
    )
    parser.add_argument("verb", choices=VERBS, help="Stage to run")
    parser.add_argument("--config", help="YAML file overriding the option defaults")
    parser.add_argument("--seed", type=int, help="Master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="CSV output path")
    parser.add_argument("--store", help="Learned-artifact store path")
    parser.add_argument("--preset", choices=("s1", "s2"), help="Scenario preset")
    parser.add_argument(
        "--estimators",
        type=lambda value: [item.strip() for item in value.split(",") if item.strip()],
        help=f"Comma-separated subset of {','.join(e.value for e in Estimator)}",
    )
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument(
        "--log-level", choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="Logging level"
    )
    return parser.parse_args(argv)


class Simulator:
    """Runs one CLI verb against the merged configuration."""

    def __init__(self, args: argparse.Namespace):
        self.logger: logging.Logger = logging.getLogger(__name__)
        self.args = args
        self.config: Optional[ExperimentConfig] = None
        self._handlers: Dict[str, Callable[[], None]] = {
            "align": self.align,
            "fit": self.fit,
            "evaluate": self.evaluate,
            "sweep": self.sweep,
            "show-config": self.show_config,
        }

    @property
    def overrides(self) -> Dict[str, object]:
        """CLI flags keyed by option name; unset flags are None."""
        return {
            "seed": self.args.seed,
            "out": self.args.out,
            "store": self.args.store,
            "preset": self.args.preset,
            "estimators": self.args.estimators,
            "threads": self.args.threads,
            "log-level": self.args.log_level,
        }

    @property
    def operating_point(self) -> GridPoint:
        """First point of the grid."""
        return grid_points(self.config)[0]

    @property
    def _expected_hash(self) -> str:
        point = self.operating_point
        return config_hash(self.config.hybrid_config(point.architecture, point.rf_chains))

    def _load_store(self) -> ArtifactStore:
        if not self.config.store.is_file():
            raise InvalidInputError(f"No store at {self.config.store}; run align first.")
        store = ArtifactStore.load(self.config.store, expected_hash=self._expected_hash)
        if store.seed != self.config.seed:
            self.logger.warning(
                "Store %s was learned with seed %d, running with seed %d",
                self.config.store,
                store.seed,
                self.config.seed,
            )
        return store

    def align(self) -> None:
        """Learn the beam lists of the operating point and start a new store."""
        tx_list, rx_list = align_point(self.config, self.operating_point)
        store = ArtifactStore(
            self._expected_hash, self.config.seed, pack_beam_lists(tx_list, rx_list)
        )
        store.save(self.config.store)

    def fit(self) -> None:
        """Fit the low-rank models with the stored beams and add them to the store."""
        store = self._load_store()
        setup = setup_point(self.config, self.operating_point, *unpack_beam_lists(store.matrices))
        store.matrices.update(pack_models(fit_point(setup)))
        store.save(self.config.store)

    def evaluate(self) -> None:
        """Evaluate the stored beams and models on fresh passages and write the CSV."""
        store = self._load_store()
        setup = setup_point(self.config, self.operating_point, *unpack_beam_lists(store.matrices))
        models = unpack_models(store.matrices)
        missing = [
            estimator.value
            for estimator in self.config.estimators
            if estimator in (Estimator.JS, Estimator.DS) and (estimator.value, 0) not in models
        ]
        if missing:
            raise InvalidInputError(
                f"Store {self.config.store} has no fitted {', '.join(missing)} model."
            )
        write_csv(evaluate_point(setup, models, self.config.threads), self.config.out)

    def sweep(self) -> None:
        """Align, fit and evaluate every grid point and write the CSV."""
        write_csv(run_sweep(self.config), self.config.out)

    def show_config(self) -> None:
        """Print the merged configuration."""
        sys.stdout.write(self.config.to_yaml())

    def main(self) -> int:
        """Run the requested verb and return the process exit code."""
        try:
            self.config = load_config(self.args.config, self.overrides)
            logging.getLogger().setLevel(self.config.log_level)
            self._handlers[self.args.verb]()
        except MvlrError as err:
            self.logger.error(f"Failed to handle {self.args.verb} with error: {err}")
            return err.exit_code
        return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Console entry point."""
    args = parse_args(argv)
    logging.basicConfig(level=args.log_level or logging.INFO, format=LOG_FORMAT)
    return Simulator(args).main()


if __name__ == "__main__":
    sys.exit(main())
