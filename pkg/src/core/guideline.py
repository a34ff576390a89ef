"""
Guideline baseline.
Class I / Class IIa CRT recommendation rules over LVEF, LBBB, QRSd and NYHA class.
Sinus rhythm and guideline-directed medical therapy are assumed satisfied.
"""

from typing import Dict, List, Sequence, Tuple

import numpy as np

from src.core.errors import DataValidationError
from src.core.models import GuidelineClass, PatientRecord


class GuidelineClassifier:
    """Rule-table classifier; feature names are configurable for non-default schemas."""

    LVEF_CUTOFF = 35.0
    QRSD_WIDE = 150.0
    QRSD_INTERMEDIATE = 120.0

    def __init__(
        self,
        lvef: str = "lvef",
        lbbb: str = "lbbb",
        qrsd: str = "qrsd",
        nyha: Sequence[Tuple[str, str]] = (("II", "nyha_ii"), ("III", "nyha_iii"), ("IV", "nyha_iv")),
    ):
        self.lvef = lvef
        self.lbbb = lbbb
        self.qrsd = qrsd
        self.nyha = list(nyha)

    def _value(self, record: PatientRecord, name: str) -> float:
        try:
            return record.value(name)
        except KeyError:
            raise DataValidationError(
                f"record {record.id} lacks a feature the guideline needs", column=name
            ) from None

    def nyha_class(self, record: PatientRecord) -> str:
        """NYHA level from the one-hot columns (first maximum wins)."""
        values = [self._value(record, column) for _, column in self.nyha]
        if max(values) <= 0.0:
            raise DataValidationError(f"record {record.id} has no NYHA class set", column=self.nyha[0][1])
        return self.nyha[int(np.argmax(values))][0]

    def classify(self, record: PatientRecord) -> GuidelineClass:
        lvef = self._value(record, self.lvef)
        lbbb = self._value(record, self.lbbb) >= 0.5
        qrsd = self._value(record, self.qrsd)
        nyha = self.nyha_class(record)

        if lvef > self.LVEF_CUTOFF:
            return GuidelineClass(recommendation="none", trace=f"LVEF {lvef:g} > {self.LVEF_CUTOFF:g}")
        base = f"LVEF {lvef:g} <= {self.LVEF_CUTOFF:g}"
        if lbbb and qrsd >= self.QRSD_WIDE and nyha in ("II", "III", "IV"):
            return GuidelineClass(
                recommendation="I", trace=f"{base}; LBBB; QRSd {qrsd:g} >= 150; NYHA {nyha}"
            )
        if lbbb and self.QRSD_INTERMEDIATE <= qrsd < self.QRSD_WIDE:
            return GuidelineClass(
                recommendation="IIa", trace=f"{base}; LBBB; 120 <= QRSd {qrsd:g} < 150"
            )
        if not lbbb and qrsd >= self.QRSD_WIDE and nyha in ("III", "IV"):
            return GuidelineClass(
                recommendation="IIa", trace=f"{base}; non-LBBB; QRSd {qrsd:g} >= 150; NYHA {nyha}"
            )
        return GuidelineClass(
            recommendation="none",
            trace=f"{base}; {'LBBB' if lbbb else 'non-LBBB'}; QRSd {qrsd:g}; NYHA {nyha}: no class fired",
        )

    def predict(self, record: PatientRecord) -> int:
        return int(self.classify(record).recommendation in ("I", "IIa"))


_default = GuidelineClassifier()


def classify_guideline(record: PatientRecord) -> GuidelineClass:
    """Class I, IIa or none for one record under the default feature names."""
    return _default.classify(record)


def guideline_predict(record: PatientRecord) -> int:
    """1 iff the record falls in Class I or Class IIa."""
    return _default.predict(record)


def guideline_batch(records: Sequence[PatientRecord]) -> Tuple[List[GuidelineClass], np.ndarray]:
    classes = [classify_guideline(r) for r in records]
    predictions = np.array([int(c.recommendation in ("I", "IIa")) for c in classes], dtype=int)
    return classes, predictions
