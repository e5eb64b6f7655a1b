from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd


@dataclass
class GroundTruth:
    """Generator-side state for every visit-1 row, aligned 1:1 with the emitted cohort."""

    ids: np.ndarray
    true_class: np.ndarray  # raw condition code per participant
    class_index: np.ndarray
    latent: np.ndarray  # (n, m) standardized biomarker values before scaling
    lifestyle: np.ndarray  # (n, l) standardized lifestyle values
    active: np.ndarray  # bool per participant, from the raw activity minutes
    future: Optional[np.ndarray] = None  # (n, m) noiseless follow-up values in natural units

    def __len__(self):
        return int(self.ids.shape[0])

    def to_frame(self, biomarker_names: list[str]) -> pd.DataFrame:
        frame = pd.DataFrame({
            "id": self.ids,
            "true_class": self.true_class,
            "active": self.active.astype(int),
        })
        if self.future is not None:
            for j, name in enumerate(biomarker_names):
                frame[f"future_{name}"] = np.round(self.future[:, j], 6)
        return frame

    def __repr__(self):
        return f"<GroundTruth(participants={len(self)}, followup={'yes' if self.future is not None else 'no'})>"
