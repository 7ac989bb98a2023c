from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from medragkit.corpus import CaseRecord, ImageRef, Roi  # noqa: E402
from medragkit.metrics import ConceptLexicon  # noqa: E402


@pytest.fixture
def lexicon() -> ConceptLexicon:
    return ConceptLexicon.from_pairs(
        [
            ("budd-chiari syndrome", "C1"),
            ("hepatic vein", "C2"),
            ("hepatic vein thrombosis", "C3"),
            ("portal hypertension", "C4"),
            ("angioplasty", "C5"),
            ("inferior vena cava", "C6"),
        ]
    )


@pytest.fixture
def annotated_case() -> CaseRecord:
    findings = (
        "MRI examination revealed a cystic tumour arising from the right ovary "
        "measuring 7.5 cm with two small nodular peripheral solid components "
        "adhering to its internal wall showing low signal on T2-weighted images."
    )
    discussion = (
        "Borderline ovarian tumours are uncommon neoplasms intermediate between "
        "benign and malignant types; MRI plays a crucial role in staging, and "
        "large papillary projections are suggestive of borderline or malignant "
        "lesions, so follow-up imaging of the remaining ovary is mandatory."
    )
    return CaseRecord(
        id="case-ann-1",
        source="eurorad",
        images=[
            ImageRef(image_id="img-1", uri="fixtures/img-1.png",
                     rois=[Roi(0.2, 0.3, 0.6, 0.7, "cystic mass")]),
            ImageRef(image_id="img-2", uri="fixtures/img-2.png"),
        ],
        clinical_history="A 21-year-old woman referred for a cystic right adnexal mass.",
        image_findings=findings,
        discussion=discussion,
        human_annotated=True,
    )


@pytest.fixture
def unannotated_case() -> CaseRecord:
    return CaseRecord(
        id="case-un-1",
        source="lld",
        images=[ImageRef(image_id="img-3", uri="fixtures/img-3.png")],
        clinical_history="Incidental hepatic lesion on surveillance imaging.",
        human_annotated=False,
    )
