from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd


class DataVisualizer:
    # ===== partition =====
    @staticmethod
    def class_count_table(partition: Sequence[np.ndarray], labels: np.ndarray, num_classes: int) -> pd.DataFrame:
        """One row per client: sample count per class plus the row total."""
        rows = []
        for k, indices in enumerate(partition):
            counts = np.bincount(labels[np.asarray(indices, dtype=np.int64)], minlength=num_classes)
            row = {"client": k}
            row.update({f"c_{c}": int(counts[c]) for c in range(num_classes)})
            row["total"] = int(counts.sum())
            rows.append(row)
        return pd.DataFrame(rows, columns=["client"] + [f"c_{c}" for c in range(num_classes)] + ["total"])

    @staticmethod
    def column_sums(table: pd.DataFrame) -> pd.Series:
        return table.drop(columns=["client"]).sum(axis=0)

    @staticmethod
    def print_class_counts(table: pd.DataFrame) -> None:
        print("\n============================")
        print(" Samples per class and client ")
        print("============================")
        sums = {"client": "sum", **DataVisualizer.column_sums(table).to_dict()}
        shown = pd.concat([table.astype({"client": str}), pd.DataFrame([sums])], ignore_index=True)
        print(shown.to_string(index=False))

    @staticmethod
    def save_class_counts(table: pd.DataFrame, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(path, index=False)
