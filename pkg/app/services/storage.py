import json
from pathlib import Path
from typing import Any, List

import pandas as pd
from loguru import logger

from app.schemas.run import RunManifest


class ArtifactStore:
    """Каталог артефактов запуска: CSV для чисел, JSON для отчётов и манифеста."""

    def __init__(self, output_dir: str):
        self.root = Path(output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.artifacts: List[str] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        """Сохраняет DataFrame и регистрирует его в манифесте"""
        target = self.path(name)
        try:
            frame.to_csv(target, index=False)
        except OSError as e:
            logger.error(f"Artifact write failed for {target}: {e}")
            raise
        self._register(name)
        logger.info(f"Artifact written: {target} ({len(frame)} rows)")
        return target

    def write_json(self, name: str, payload: Any) -> Path:
        target = self.path(name)
        with open(target, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, ensure_ascii=False, default=str)
        self._register(name)
        logger.info(f"Artifact written: {target}")
        return target

    def write_manifest(self, manifest: RunManifest) -> Path:
        manifest = manifest.model_copy(update={"artifacts": list(self.artifacts)})
        target = self.path("manifest.json")
        target.write_text(manifest.model_dump_json(indent=2), encoding="utf-8")
        logger.success(f"Manifest written: {target}")
        return target

    def _register(self, name: str):
        if name not in self.artifacts:
            self.artifacts.append(name)
