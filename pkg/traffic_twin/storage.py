from pathlib import Path
from typing import Any
import json
import platform

import networkx as nx
import numpy as np
import pandas as pd

from traffic_twin.errors import ConfigInvalid

__all__ = ["RunDirectory"]


class RunDirectory:
    """
    Output directory of a pipeline run.

    Every command writes its JSON and CSV artifacts here, plus a manifest that
    pins the config digest, the effective seed and the library versions.
    Wall-clock timings go to ``timings.json`` only, so all other files are
    reproducible byte for byte.
    """

    timings_filename = "timings.json"

    def __init__(self, root: Path | str):
        self._root = Path(root)

        if self._root.exists() and not self._root.is_dir():
            raise ConfigInvalid("Output path must be a directory", self._root)

        self._root.mkdir(parents=True, exist_ok=True)

    @property
    def root(self) -> Path:
        return self._root

    def path(self, name: str) -> Path:
        return self._root / name

    def require(self, name: str) -> Path:
        """Path of an input artifact written by an earlier command"""
        path = self.path(name)
        if not path.is_file():
            raise ConfigInvalid(f"{name} is missing; run the producing command first", path)

        return path

    def exists(self, name: str) -> bool:
        return self.path(name).is_file()

    def write_json(self, name: str, data: Any) -> Path:
        path = self.path(name)
        with path.open("w", encoding="utf8", newline="\n") as file:
            json.dump(data, file, ensure_ascii=False, indent=2)
            file.write("\n")

        return path

    def read_json(self, name: str) -> Any:
        with self.require(name).open("r", encoding="utf8") as file:
            return json.load(file)

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, lineterminator="\n")
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.write_text(text, encoding="utf8", newline="\n")
        return path

    def write_manifest(self, command: str, digest: str | None, seed: int | None, outputs: list[str]) -> Path:
        from traffic_twin import __version__

        return self.write_json(
            f"manifest.{command}.json",
            {
                "command": command,
                "config_sha256": digest,
                "seed": seed,
                "outputs": sorted(outputs),
                "timings": self.timings_filename,
                "versions": {
                    "traffic_twin": __version__,
                    "numpy": np.__version__,
                    "networkx": nx.__version__,
                    "pandas": pd.__version__,
                    "python": platform.python_version(),
                },
            },
        )

    def write_timings(self, command: str, timings: dict[str, Any]) -> Path:
        """Merge this command's wall-clock timings into ``timings.json``"""
        current = {}
        if self.exists(self.timings_filename):
            current = self.read_json(self.timings_filename)

        current[command] = timings
        return self.write_json(self.timings_filename, current)
