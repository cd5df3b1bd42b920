"""Regenerate the small synthetic demo corpus shipped under src/medrec/assets/demo.

Everything here is invented for testing: identifiers, frequencies and label text
are synthetic and carry no clinical authority. Output is deterministic.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from medrec.ontology import (
    IcdVersion,
    Taxonomy,
    atc_taxonomy,
    chapter_taxonomy,
    save_taxonomy,
)

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "src" / "medrec" / "assets" / "demo"
FIXTURES = ROOT / "src" / "medrec" / "assets" / "fixtures"

ATC_L1 = {
    "A": "Alimentary tract and metabolism",
    "B": "Blood and blood forming organs",
    "C": "Cardiovascular system",
    "D": "Dermatologicals",
    "G": "Genito urinary system and sex hormones",
    "H": "Systemic hormonal preparations",
    "J": "Antiinfectives for systemic use",
    "L": "Antineoplastic and immunomodulating agents",
    "M": "Musculo-skeletal system",
    "N": "Nervous system",
    "R": "Respiratory system",
    "V": "Various",
}
ATC_L2 = {
    "A02": "Drugs for acid related disorders",
    "A03": "Drugs for functional gastrointestinal disorders",
    "A04": "Antiemetics and antinauseants",
    "A06": "Drugs for constipation",
    "A07": "Antidiarrheals, intestinal antiinflammatory/antiinfective agents",
    "A10": "Drugs used in diabetes",
    "A11": "Vitamins",
    "A12": "Mineral supplements",
    "B01": "Antithrombotic agents",
    "B03": "Antianemic preparations",
    "B05": "Blood substitutes and perfusion solutions",
    "C01": "Cardiac therapy",
    "C03": "Diuretics",
    "C07": "Beta blocking agents",
    "C08": "Calcium channel blockers",
    "C09": "Agents acting on the renin-angiotensin system",
    "C10": "Lipid modifying agents",
    "D01": "Antifungals for dermatological use",
    "G02": "Other gynecologicals",
    "H01": "Pituitary and hypothalamic hormones and analogues",
    "H02": "Corticosteroids for systemic use",
    "H03": "Thyroid therapy",
    "J01": "Antibacterials for systemic use",
    "J07": "Vaccines",
    "L01": "Antineoplastic agents",
    "L03": "Immunostimulants",
    "M01": "Antiinflammatory and antirheumatic products",
    "M03": "Muscle relaxants",
    "N02": "Analgesics",
    "N03": "Antiepileptics",
    "N05": "Psycholeptics",
    "N06": "Psychoanaleptics",
    "R03": "Drugs for obstructive airway diseases",
    "R05": "Cough and cold preparations",
    "V03": "All other therapeutic products",
    "V06": "General nutrients",
}
ATC_L3 = {
    "A02B": "Drugs for peptic ulcer and gastro-oesophageal reflux disease",
    "A03F": "Propulsives",
    "A04A": "Antiemetics and antinauseants",
    "A06A": "Drugs for constipation",
    "A07A": "Intestinal antiinfectives",
    "A10A": "Insulins and analogues",
    "A10B": "Blood glucose lowering drugs, excl. insulins",
    "A11C": "Vitamin A and D, incl. combinations of the two",
    "A12A": "Calcium",
    "A12B": "Potassium",
    "A12C": "Other mineral supplements",
    "B01A": "Antithrombotic agents",
    "B03A": "Iron preparations",
    "B05B": "I.V. solutions",
    "B05X": "I.V. solution additives",
    "C01B": "Antiarrhythmics, class I and III",
    "C01C": "Cardiac stimulants excl. cardiac glycosides",
    "C01D": "Vasodilators used in cardiac diseases",
    "C03C": "High-ceiling diuretics",
    "C03D": "Aldosterone antagonists and other potassium-sparing agents",
    "C07A": "Beta blocking agents",
    "C08C": "Selective calcium channel blockers with mainly vascular effects",
    "C09A": "ACE inhibitors, plain",
    "C09C": "Angiotensin II receptor blockers (ARBs), plain",
    "C10A": "Lipid modifying agents, plain",
    "D01A": "Antifungals for topical use",
    "G02A": "Uterotonics",
    "H01B": "Posterior pituitary lobe hormones",
    "H02A": "Corticosteroids for systemic use, plain",
    "H03A": "Thyroid preparations",
    "J01C": "Beta-lactam antibacterials, penicillins",
    "J01D": "Other beta-lactam antibacterials",
    "J01M": "Quinolone antibacterials",
    "J01X": "Other antibacterials",
    "J07B": "Viral vaccines",
    "L01E": "Protein kinase inhibitors",
    "L03A": "Immunostimulants",
    "M01A": "Antiinflammatory and antirheumatic products, non-steroids",
    "M03B": "Muscle relaxants, centrally acting agents",
    "N02A": "Opioids",
    "N02B": "Other analgesics and antipyretics",
    "N03A": "Antiepileptics",
    "N05B": "Anxiolytics",
    "N05C": "Hypnotics and sedatives",
    "N06A": "Antidepressants",
    "R03A": "Adrenergics, inhalants",
    "R03B": "Other drugs for obstructive airway diseases, inhalants",
    "R05C": "Expectorants, excl. combinations with cough suppressants",
    "V03A": "All other therapeutic products",
    "V06D": "Other nutrients",
}
ATC_L4 = {
    "A02BA": "H2-receptor antagonists",
    "A02BC": "Proton pump inhibitors",
    "A03FA": "Propulsives",
    "A04AA": "Serotonin (5HT3) antagonists",
    "A06AB": "Contact laxatives",
    "A06AD": "Osmotically acting laxatives",
    "A06AG": "Enemas",
    "A06AX": "Other drugs for constipation",
    "A07AA": "Antibiotics",
    "A10AB": "Insulins and analogues for injection, fast-acting",
    "A10AE": "Insulins and analogues for injection, long-acting",
    "A10BA": "Biguanides",
    "A11CC": "Vitamin D and analogues",
    "A12AA": "Calcium",
    "A12BA": "Potassium",
    "A12CC": "Magnesium",
    "B01AA": "Vitamin K antagonists",
    "B01AB": "Heparin group",
    "B01AC": "Platelet aggregation inhibitors excl. heparin",
    "B01AF": "Direct factor Xa inhibitors",
    "B03AA": "Iron bivalent, oral preparations",
    "B05BA": "Solutions for parenteral nutrition",
    "B05XA": "Electrolyte solutions",
    "C01BD": "Antiarrhythmics, class III",
    "C01CA": "Adrenergic and dopaminergic agents",
    "C01DA": "Organic nitrates",
    "C03CA": "Sulfonamides, plain",
    "C03DA": "Aldosterone antagonists",
    "C07AB": "Beta blocking agents, selective",
    "C08CA": "Dihydropyridine derivatives",
    "C09AA": "ACE inhibitors, plain",
    "C09CA": "Angiotensin II receptor blockers (ARBs), plain",
    "C10AA": "HMG CoA reductase inhibitors",
    "D01AC": "Imidazole and triazole derivatives",
    "G02AB": "Ergot alkaloids",
    "H01BB": "Oxytocin and analogues",
    "H02AB": "Glucocorticoids",
    "H03AA": "Thyroid hormones",
    "J01CR": "Combinations of penicillins, incl. beta-lactamase inhibitors",
    "J01DD": "Third-generation cephalosporins",
    "J01MA": "Fluoroquinolones",
    "J01XA": "Glycopeptide antibacterials",
    "J07BB": "Influenza vaccines",
    "J07BX": "Other viral vaccines",
    "L03AA": "Colony stimulating factors",
    "M01AE": "Propionic acid derivatives",
    "M03BX": "Other centrally acting agents",
    "N02AA": "Natural opium alkaloids",
    "N02AX": "Other opioids",
    "N02BA": "Salicylic acid and derivatives",
    "N02BE": "Anilides",
    "N03AX": "Other antiepileptics",
    "N05BA": "Benzodiazepine derivatives",
    "N05CF": "Benzodiazepine related drugs",
    "N05CH": "Melatonin receptor agonists",
    "N06AB": "Selective serotonin reuptake inhibitors",
    "N06AX": "Other antidepressants",
    "R03AC": "Selective beta-2-adrenoreceptor agonists",
    "R03BB": "Anticholinergics",
    "R05CB": "Mucolytics",
    "V03AB": "Antidotes",
    "V06DC": "Carbohydrates",
}
# In the taxonomy but deliberately outside the medication vocabulary.
OUT_OF_VOCAB = {"L01EA": "BCR-ABL tyrosine kinase inhibitors"}

ICD10 = {
    # circulatory
    "I10": "Essential (primary) hypertension",
    "I11.0": "Hypertensive heart disease with heart failure",
    "I21.4": "Non-ST elevation (NSTEMI) myocardial infarction",
    "I25.10": "Atherosclerotic heart disease of native coronary artery without angina pectoris",
    "I26.99": "Other pulmonary embolism without acute cor pulmonale",
    "I27.20": "Pulmonary hypertension, unspecified",
    "I35.0": "Nonrheumatic aortic (valve) stenosis",
    "I42.9": "Cardiomyopathy, unspecified",
    "I48.19": "Other persistent atrial fibrillation",
    "I48.91": "Unspecified atrial fibrillation",
    "I50.22": "Chronic systolic (congestive) heart failure",
    "I50.23": "Acute on chronic systolic (congestive) heart failure",
    "I50.9": "Heart failure, unspecified",
    "I63.9": "Cerebral infarction, unspecified",
    "I80.03": "Phlebitis and thrombophlebitis of superficial vessels of lower extremities, bilateral",
    "I95.9": "Hypotension, unspecified",
    # endocrine
    "E03.9": "Hypothyroidism, unspecified",
    "E11.65": "Type 2 diabetes mellitus with hyperglycemia",
    "E11.9": "Type 2 diabetes mellitus without complications",
    "E66.9": "Obesity, unspecified",
    "E78.5": "Hyperlipidemia, unspecified",
    "E86.0": "Dehydration",
    "E87.1": "Hypo-osmolality and hyponatremia",
    "E87.6": "Hypokalemia",
    # respiratory
    "J18.9": "Pneumonia, unspecified organism",
    "J44.1": "Chronic obstructive pulmonary disease with (acute) exacerbation",
    "J45.909": "Unspecified asthma, uncomplicated",
    "J96.01": "Acute respiratory failure with hypoxia",
    # digestive
    "K21.9": "Gastro-esophageal reflux disease without esophagitis",
    "K56.609": "Unspecified intestinal obstruction, unspecified as to partial versus complete obstruction",
    "K58.9": "Irritable bowel syndrome without diarrhea",
    "K59.00": "Constipation, unspecified",
    "K70.30": "Alcoholic cirrhosis of liver without ascites",
    "K85.90": "Acute pancreatitis without necrosis or infection, unspecified",
    "K92.2": "Gastrointestinal hemorrhage, unspecified",
    # neoplasm / blood
    "C34.90": "Malignant neoplasm of unspecified part of unspecified bronchus or lung",
    "C50.919": "Malignant neoplasm of unspecified site of unspecified female breast",
    "D64.9": "Anemia, unspecified",
    "D69.6": "Thrombocytopenia, unspecified",
    "D70.9": "Neutropenia, unspecified",
    # musculoskeletal / injury / skin
    "L03.115": "Cellulitis of right lower limb",
    "M17.11": "Unilateral primary osteoarthritis, right knee",
    "S72.001A": "Fracture of unspecified part of neck of right femur, initial encounter for closed fracture",
    "T40.2X1A": "Poisoning by other opioids, accidental (unintentional), initial encounter",
    "W19.XXXA": "Unspecified fall, initial encounter",
    # obstetric / perinatal
    "O14.93": "Unspecified pre-eclampsia, third trimester",
    "O72.1": "Other immediate postpartum hemorrhage",
    "O80": "Encounter for full-term uncomplicated delivery",
    "P07.30": "Preterm newborn, unspecified weeks of gestation",
    # other chapters
    "A41.9": "Sepsis, unspecified organism",
    "F32.9": "Major depressive disorder, single episode, unspecified",
    "G47.00": "Insomnia, unspecified",
    "N17.9": "Acute kidney failure, unspecified",
    "R06.00": "Dyspnea, unspecified",
    "R50.9": "Fever, unspecified",
    "U07.1": "COVID-19",
    "Z68.30": "Body mass index [BMI] 30.0-30.9, adult",
    "Z79.01": "Long term (current) use of anticoagulants",
    "Z79.4": "Long term (current) use of insulin",
    "Z86.718": "Personal history of other venous thrombosis and embolism",
    "Z95.2": "Presence of prosthetic heart valve",
}
ICD9 = {
    "038.9": "Unspecified septicemia",
    "250.00": "Diabetes mellitus without mention of complication, type II or unspecified type, not stated as uncontrolled",
    "276.8": "Hypopotassemia",
    "401.9": "Unspecified essential hypertension",
    "428.0": "Congestive heart failure, unspecified",
    "486": "Pneumonia, organism unspecified",
    "530.81": "Esophageal reflux",
    "584.9": "Acute kidney failure, unspecified",
    "E885.9": "Accidental fall from other slipping, tripping, or stumbling",
}
PCS10 = {
    "B2111ZZ": "Fluoroscopy of multiple coronary arteries using low osmolar contrast",
    "4A023N7": "Measurement of cardiac sampling and pressure, left heart, percutaneous approach",
    "5A1955Z": "Respiratory ventilation, greater than 96 consecutive hours",
    "0SRR0J9": "Replacement of right hip joint, femoral surface with synthetic substitute, cemented, open approach",
    "02HV33Z": "Insertion of infusion device into superior vena cava, percutaneous approach",
    "10E0XZZ": "Delivery of products of conception, external approach",
    "0DJ08ZZ": "Inspection of upper intestinal tract, via natural or artificial opening endoscopic",
}
PCS9 = {
    "96.71": "Continuous invasive mechanical ventilation for less than 96 consecutive hours",
    "38.93": "Venous catheterization, not elsewhere classified",
}

# MEDI-style indications: diagnosis prefix -> L4 classes.
INDICATIONS = {
    "I10": ["C09AA", "C09CA", "C08CA"],
    "I11": ["C09AA", "C03CA"],
    "I21": ["B01AB", "B01AC", "C07AB", "C10AA", "C01DA"],
    "I25": ["B01AC", "C10AA", "C07AB", "C01DA"],
    "I26": ["B01AB", "B01AA"],
    "I27": ["C03CA"],
    "I48": ["C01BD", "B01AA", "B01AF", "C07AB"],
    "I50": ["C03CA", "C03DA", "C07AB", "C09AA"],
    "I63": ["B01AC", "C10AA"],
    "I80": ["B01AB"],
    "I95": ["C01CA"],
    "E03": ["H03AA"],
    "E11": ["A10AB", "A10AE", "A10BA"],
    "E78": ["C10AA"],
    "E86": ["B05XA"],
    "E87": ["A12BA", "A12CC", "B05XA"],
    "J18": ["J01DD", "J01CR", "J01MA"],
    "J44": ["R03AC", "R03BB", "H02AB"],
    "J45": ["R03AC", "H02AB"],
    "J96": ["R03AC"],
    "K21": ["A02BC", "A02BA"],
    "K58": ["A06AD"],
    "K59": ["A06AB", "A06AD", "A06AX"],
    "K70": ["A06AD", "A07AA"],
    "K85": ["N02AA", "A02BC"],
    "K92": ["A02BC"],
    "C34": ["L03AA", "A04AA"],
    "C50": ["L03AA", "A04AA"],
    "D64": ["B03AA"],
    "D70": ["L03AA"],
    "L03": ["J01XA", "J01CR"],
    "M17": ["M01AE", "N02BE"],
    "S72": ["N02AA", "B01AB", "N02BE"],
    "T40": ["V03AB"],
    "O14": ["A12CC"],
    "O72": ["H01BB", "G02AB"],
    "O80": ["H01BB"],
    "A41": ["J01XA", "J01DD", "C01CA"],
    "F32": ["N06AB", "N06AX"],
    "G47": ["N05CH", "N05CF"],
    "N17": ["B05XA"],
    "R50": ["N02BE"],
    "U07": ["H02AB"],
    "038": ["J01XA"],
    "250": ["A10AB"],
    "276": ["A12BA"],
    "401": ["C09AA"],
    "428": ["C03CA", "C07AB"],
    "486": ["J01DD", "J01MA"],
    "530": ["A02BC"],
    "584": ["B05XA"],
}

CURATED_DDI = [
    ("B01AB", "B01AC", 40), ("B01AA", "B01AC", 35), ("B01AA", "N02BA", 30), ("B01AF", "B01AC", 22),
    ("B01AA", "C01BD", 28), ("C01BD", "C07AB", 18), ("C01BD", "J01MA", 15), ("C09AA", "A12BA", 12),
    ("C03DA", "A12BA", 14), ("C09AA", "C03DA", 10), ("N02AA", "N05BA", 25), ("N02AX", "N06AB", 16),
    ("N02AX", "N05BA", 9), ("N02AA", "N05CF", 11), ("J01MA", "A12CC", 6), ("A02BC", "B01AC", 8),
    ("M01AE", "B01AA", 20), ("M01AE", "H02AB", 7), ("M01AE", "C09AA", 6), ("N06AB", "B01AC", 5),
    ("H03AA", "A12AA", 3), ("A10AB", "C07AB", 4), ("J01XA", "C03CA", 5), ("J01DD", "B01AA", 6),
]

# term -> diagnosis category
LEXICON = {
    "bradycardia": "R00",
    "sinus bradycardia": "R00",
    "cardiogenic shock": "R57",
    "heart failure": "I50",
    "decompensated heart failure": "I50",
    "hypotension": "I95",
    "angioedema": "T78",
    "pregnancy": "Z33",
    "gastrointestinal bleeding": "K92",
    "peptic ulcer": "K27",
    "thrombocytopenia": "D69",
    "renal impairment": "N18",
    "metabolic acidosis": "E87",
    "acute kidney injury": "N17",
    "myasthenia gravis": "G70",
    "respiratory depression": "R06",
    "paralytic ileus": "K56",
    "bowel obstruction": "K56",
    "asthma": "J45",
    "systemic fungal infection": "B49",
    "heart block": "I44",
    "hypothyroidism": "E03",
    "anuria": "R34",
    "hepatic coma": "K72",
    "hemorrhage": "R58",
    "narrow-angle glaucoma": "H40",
    "hyperkalemia": "E87",
}

CONTRA_TEXT = {
    "C07AB": "Contraindicated in severe bradycardia, heart block greater than first degree, cardiogenic shock and decompensated heart failure.",
    "C09AA": "Do not use in patients with a history of angioedema or during pregnancy. Use with caution in hypotension.",
    "M01AE": "Contraindicated with active gastrointestinal bleeding, peptic ulcer disease and severe heart failure.",
    "B01AB": "Contraindicated in patients with uncontrolled active bleeding or severe thrombocytopenia.",
    "A10BA": "Contraindicated in severe renal impairment, acute kidney injury and metabolic acidosis.",
    "J01MA": "May exacerbate muscle weakness in patients with myasthenia gravis.",
    "N02AA": "Contraindicated in significant respiratory depression, acute or severe asthma and paralytic ileus.",
    "A06AD": "Do not use in known or suspected bowel obstruction.",
    "H02AB": "Contraindicated in systemic fungal infection.",
    "C01BD": "Contraindicated in sinus bradycardia and heart block without a pacemaker; caution in hypothyroidism.",
    "C03CA": "Contraindicated in anuria and hepatic coma.",
    "B01AA": "Contraindicated in pregnancy and in patients with active hemorrhage.",
    "N05BA": "Contraindicated in myasthenia gravis and acute narrow-angle glaucoma.",
    "C03DA": "Contraindicated in hyperkalemia and acute kidney injury.",
    "N02AX": "Contraindicated in patients with significant respiratory depression.",
}

CASE_STUDY_PRIOR = ["C01BD", "C03CA", "C07AB", "B01AB", "A02BC", "A12BA", "A12CC", "N02AX", "A06AB", "A06AD", "N05CH", "V06DC"]
CASE_STUDY_GT = [
    "C07AB", "A12BA", "B01AB", "C01BD", "A02BC", "C03CA", "N02AX", "A06AD", "A12CC", "V06DC", "N05CH",
    "A06AX", "D01AC", "J07BX", "N06AX",
]
CASE_ID = "case-study"


def write_tsv(path: Path, header: list[str], rows: list[list[object]]) -> None:
    lines = ["\t".join(header)] + ["\t".join(str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_ontology(out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    atc = {**ATC_L1, **ATC_L2, **ATC_L3, **ATC_L4, **OUT_OF_VOCAB}
    save_taxonomy(atc_taxonomy(dict(sorted(atc.items()))), out / "atc.tsv")
    save_taxonomy(chapter_taxonomy(IcdVersion.ICD10CM, ICD10), out / "icd10cm.tsv")
    save_taxonomy(chapter_taxonomy(IcdVersion.ICD9CM, ICD9), out / "icd9cm.tsv")
    for name, table in (("icd10pcs", PCS10), ("icd9pcs", PCS9)):
        rows = [(code.replace(".", ""), None, 1, desc) for code, desc in sorted(table.items())]
        save_taxonomy(Taxonomy.from_rows(rows, name=name), out / f"{name}.tsv")


def build_ids(rng: random.Random) -> tuple[dict[str, list[str]], dict[str, str]]:
    """Synthetic ingredient ids: one or two per L4 class, mapped to invented L5 codes."""
    rxcui_of_l4: dict[str, list[str]] = {}
    idmap: dict[str, str] = {}
    next_id = 900001
    for l4 in sorted(ATC_L4) + sorted(OUT_OF_VOCAB):
        ids = []
        for k in range(1 + (rng.random() < 0.35)):
            rx = str(next_id)
            next_id += 1
            idmap[rx] = f"{l4}{k + 1:02d}"
            ids.append(rx)
        rxcui_of_l4[l4] = ids
    return rxcui_of_l4, idmap


def build_twosides(rng: random.Random, rx: dict[str, list[str]]) -> list[list[object]]:
    rows: list[list[object]] = []
    vocab = sorted(ATC_L4)
    pairs = {tuple(sorted((a, b))): f for a, b, f in CURATED_DDI}
    while len(pairs) < len(CURATED_DDI) + 70:
        a, b = rng.sample(vocab, 2)
        pairs.setdefault(tuple(sorted((a, b))), rng.randint(1, 12))
    for (a, b), freq in sorted(pairs.items()):
        ra, rb = rng.choice(rx[a]), rng.choice(rx[b])
        if rng.random() < 0.5:
            ra, rb = rb, ra
        rows.append([ra, rb, freq])
        if rng.random() < 0.15:
            # the same pair reported in the opposite direction
            rows.append([rb, ra, rng.randint(1, 5)])
    rows.append(["999001", rx["C07AB"][0], 4])  # unmapped ingredient
    rows.append([rx["N02AA"][0], "999002", 2])
    rows.append([rx["L01EA"][0], rx["B01AA"][0], 9])  # maps outside the vocabulary
    for l4 in ("B01AB", "C07AB"):
        if len(rx[l4]) > 1:
            rows.append([rx[l4][0], rx[l4][1], 3])  # two ingredients of one class
    return rows


def build_labels(rng: random.Random, rx: dict[str, list[str]]) -> list[dict[str, object]]:
    labels: list[dict[str, object]] = []
    for l4, text in sorted(CONTRA_TEXT.items()):
        ids = rx[l4]
        labels.append({"rxcui": [ids[0]], "substance": f"{l4.lower()}-ingredient", "contraText": text})
        # a shorter duplicate label for the same ingredient
        labels.append({"rxcui": [ids[0]], "substance": f"{l4.lower()}-ingredient", "contraText": text.split(",")[0] + "."})
        if len(ids) > 1:
            # raw openFDA record layout
            labels.append(
                {
                    "openfda": {"rxcui": [ids[1]], "substance_name": [f"{l4.lower()}-ingredient-2"]},
                    "contraindications": [text],
                }
            )
    labels.append({"rxcui": [], "substance": "no-id", "contraText": "Contraindicated in pregnancy."})
    labels.append({"rxcui": [rx["C09AA"][0]], "substance": "no-text", "contraText": ""})
    labels.append(
        {
            "rxcui": [rx["C09AA"][0], rx["C03CA"][0]],
            "substance": "combination",
            "contraText": "Contraindicated in anuria and angioedema.",
        }
    )
    labels.append({"rxcui": ["999003"], "substance": "unmapped", "contraText": "Avoid in heart failure."})
    labels.append(
        {"rxcui": [rx["L01EA"][0]], "substance": "out-of-vocab", "contraText": "Contraindicated in pregnancy."}
    )
    rng.shuffle(labels)
    return labels


def build_medi(rx: dict[str, list[str]]) -> list[list[object]]:
    rows: list[list[object]] = []
    for k, (diag, meds) in enumerate(sorted(INDICATIONS.items())):
        for j, med in enumerate(meds):
            # alternate between ingredient ids and direct ATC codes
            rows.append([diag, rx[med][0] if (k + j) % 2 else med])
    rows.append(["C34", "L01EA"])  # outside the vocabulary
    rows.append(["C50", rx["L01EA"][0]])
    rows.append(["K92", "999004"])  # unmapped
    return rows


def dx(code: str, version: str = "ICD10CM") -> dict[str, str]:
    return {"code": code, "version": version}


def case_study() -> dict[str, object]:
    target_dx = [
        "I21.4", "I50.23", "I48.19", "I35.0", "I27.20", "I80.03", "I95.9", "I42.9", "I11.0", "I25.10",
        "E11.9", "E78.5", "E66.9", "K21.9", "K58.9", "U07.1", "Z95.2", "Z79.4", "Z86.718", "Z79.01",
        "Z68.30", "R06.00",
    ]
    history_dx = ["I50.22", "I48.19", "E11.65", "E87.6", "K59.00", "G47.00", "Z79.4"]
    return {
        "caseId": CASE_ID,
        "demographics": {
            "age": 87,
            "gender": "female",
            "insurance": "Medicare",
            "language": "English",
            "admissionType": "EW EMER.",
            "maritalStatus": "WIDOWED",
            "race": "WHITE",
        },
        "visits": [
            {
                "diagnoses": [dx(c) for c in history_dx],
                "procedures": [dx("02HV33Z", "ICD10CM")],
                "medications": CASE_STUDY_PRIOR,
            }
        ],
        "target": {
            "diagnoses": [dx(c) for c in target_dx],
            "procedures": [dx("B2111ZZ"), dx("4A023N7")],
        },
        "groundTruth": CASE_STUDY_GT,
    }


POOLS = {
    "CVD": ["I10", "I21.4", "I25.10", "I48.91", "I50.9", "I63.9", "I26.99"],
    "ENDO": ["E11.9", "E03.9", "E87.1", "E87.6", "E78.5", "E86.0"],
    "RESP": ["J18.9", "J44.1", "J96.01", "J45.909"],
    "GI": ["K92.2", "K70.30", "K85.90", "K56.609", "K21.9"],
    "ONC": ["C34.90", "C50.919", "D64.9", "D69.6", "D70.9"],
    "MSK": ["S72.001A", "M17.11", "T40.2X1A", "W19.XXXA", "L03.115"],
    "OB": ["O80", "O14.93", "P07.30", "O72.1"],
    "OTHER": ["N17.9", "A41.9", "F32.9", "G47.00", "R50.9", "Z79.01"],
}
SUPPORTIVE = ["B01AB", "A02BC", "N02BE", "A06AD", "A12BA", "B05XA", "N02AX", "N05CH"]
DEMO_VALUES = {
    "gender": ["male", "female"],
    "insurance": ["Medicare", "Medicaid", "Other"],
    "language": ["English", "?"],
    "admissionType": ["EW EMER.", "URGENT", "ELECTIVE", "SURGICAL SAME DAY ADMISSION"],
    "maritalStatus": ["MARRIED", "SINGLE", "WIDOWED", None],
    "race": ["WHITE", "BLACK/AFRICAN AMERICAN", "ASIAN", "HISPANIC/LATINO", "UNKNOWN"],
}


def indicated(codes: list[str]) -> list[str]:
    out: list[str] = []
    for c in codes:
        key = c.replace(".", "")
        for end in range(len(key), 2, -1):
            out.extend(INDICATIONS.get(key[:end], []))
    return list(dict.fromkeys(out))


def synthetic_case(rng: random.Random, idx: int, groups: list[str]) -> dict[str, object]:
    def sample_dx() -> list[str]:
        picked: list[str] = []
        for g in groups:
            picked += rng.sample(POOLS[g], rng.randint(1, min(3, len(POOLS[g]))))
        picked += rng.sample(POOLS["OTHER"], rng.randint(0, 2))
        return list(dict.fromkeys(picked))

    visits = []
    for _ in range(rng.randint(0, 2)):
        diags = sample_dx()
        meds = indicated(diags)[:5] + rng.sample(SUPPORTIVE, 2)
        visits.append({"diagnoses": [dx(c) for c in diags], "procedures": [], "medications": list(dict.fromkeys(meds))})
    target = sample_dx()
    procs = [dx(rng.choice(sorted(PCS10)))] if rng.random() < 0.6 else []
    prior = visits[-1]["medications"] if visits else []
    gt = indicated(target)[:6] + [m for m in prior if rng.random() < 0.6] + rng.sample(SUPPORTIVE, 2)
    demo = {k: rng.choice(v) for k, v in DEMO_VALUES.items()}
    demo["age"] = rng.randint(19, 91)
    if idx == 3:
        del demo["race"]  # exercises the "unknown" slot
    return {
        "caseId": f"demo-{idx:02d}",
        "demographics": {k: demo[k] for k in ("age", "gender", "insurance", "language", "admissionType", "maritalStatus", "race") if k in demo},
        "visits": visits,
        "target": {"diagnoses": [dx(c) for c in target], "procedures": procs},
        "groundTruth": sorted(set(gt)),
    }


def icd9_case(idx: int) -> dict[str, object]:
    hist = ["428.0", "401.9", "276.8"] if idx == 9 else ["250.00", "530.81"]
    target = ["428.0", "486", "584.9", "E885.9"] if idx == 9 else ["038.9", "250.00", "486", "276.8"]
    prior = ["C03CA", "C07AB", "A12BA", "C09AA"] if idx == 9 else ["A10AB", "A02BC"]
    gt = ["C03CA", "C07AB", "J01DD", "B05XA", "B01AB"] if idx == 9 else ["J01XA", "A10AB", "A12BA", "J01DD", "A02BC"]
    return {
        "caseId": f"demo-{idx:02d}",
        "icdVersion": "ICD9CM",
        "demographics": {"age": 70 + idx, "gender": "male", "insurance": "Medicare", "language": "English",
                         "admissionType": "EMERGENCY", "maritalStatus": "MARRIED", "race": "WHITE"},
        "visits": [{"diagnoses": hist, "procedures": ["38.93"], "medications": prior}],
        "target": {"diagnoses": target, "procedures": ["96.71"]},
        "groundTruth": gt,
    }


def case_study_fixture() -> dict[str, object]:
    def summary(expertise: str, current: str, history: str, focus: str, risks: str) -> dict[str, object]:
        return {
            "expertise": expertise,
            "current_admission": current,
            "medication_relevant_history": history,
            "expertise_focus": focus,
            "risks_to_watch": risks,
            "visit_rationales": [{"visit_index": 1, "text": "previous admission documents the current drug regimen"}],
        }

    def drugs(items: list[tuple[str, float, str]]) -> dict[str, object]:
        return {
            "predicted_drugs": [{"code": c, "confidence": p, "reason": r} for c, p, r in items],
            "assumptions": [],
            "alternatives": [],
        }

    f: dict[str, object] = {}
    f[f"summarize/{CASE_ID}/CVD"] = summary(
        "Cardiovascular",
        "NSTEMI, acute on chronic systolic heart failure, persistent atrial fibrillation, aortic stenosis, pulmonary hypertension, hypotension",
        "prior valve replacement, long-term anticoagulation, amiodarone, metoprolol, furosemide",
        "dominant circulatory diagnoses with catheterization this visit",
        "bleeding on anticoagulation after the procedure; arrhythmia; cardiorenal decline",
    )
    f[f"summarize/{CASE_ID}/ENDO"] = summary(
        "Endocrine/Metabolic",
        "type 2 diabetes on insulin, hyperlipidemia, obesity",
        "potassium and magnesium supplementation, prior hypokalemia",
        "metabolic comorbidities and electrolyte replacement",
        "electrolyte shifts with diuresis; glycaemic instability",
    )
    f[f"summarize/{CASE_ID}/SUP"] = summary(
        "Universal Supportive Care",
        "acute coronary presentation with COVID-19 in an elderly patient",
        "tramadol, laxatives, melatonin, proton pump inhibitor, carbohydrate supplement",
        "pain, bowel care, sleep, gut protection and electrolytes",
        "opioid constipation; gut bleeding on anticoagulation",
    )
    f[f"generate/{CASE_ID}/CVD"] = drugs([
        ("C01BD", 0.9, "persistent atrial fibrillation, prior amiodarone"),
        ("C03CA", 0.9, "acute on chronic heart failure, prior furosemide"),
        ("C07AB", 0.85, "NSTEMI and rate control, prior metoprolol"),
        ("B01AB", 0.85, "NSTEMI anticoagulation, prior heparin"),
        ("C09AA", 0.5, "heart failure with diabetes"),
        ("C10AA", 0.4, "coronary disease"),
        ("A12BA", 0.7, "diuretic-associated potassium loss"),
    ])
    f[f"generate/{CASE_ID}/ENDO"] = drugs([
        ("C07AB", 0.6, "continuation of prior beta blocker"),
        ("A06AB", 0.6, "documented constipation, prior contact laxative"),
        ("A12BA", 0.8, "prior hypokalemia"),
        ("C10AA", 0.4, "hyperlipidemia"),
        ("A02BC", 0.6, "reflux, prior proton pump inhibitor"),
    ])
    f[f"generate/{CASE_ID}/SUP"] = drugs([
        ("B01AB", 0.8, "thromboprophylaxis"),
        ("C01BD", 0.6, "continuation"),
        ("C07AB", 0.6, "continuation"),
        ("A02BC", 0.8, "reflux and anticoagulation"),
        ("N02AX", 0.7, "prior tramadol"),
        ("A12BA", 0.7, "electrolyte repletion"),
        ("A06AD", 0.7, "prior osmotic laxative"),
        ("A12CC", 0.7, "prior magnesium"),
        ("V06DC", 0.6, "prior carbohydrate supplement"),
        ("A04AA", 0.3, "possible nausea with COVID-19"),
        ("N05CH", 0.6, "prior melatonin"),
    ])
    f[f"critique/{CASE_ID}"] = {
        "retained": sorted(CASE_STUDY_PRIOR),
        "removed": [
            {"code": "C09AA", "reason": "hypotensive with acute heart failure and no earlier use"},
            {"code": "C10AA", "reason": "low confidence from both proposers; not a priority this admission"},
            {"code": "A04AA", "reason": "no documented nausea or vomiting"},
        ],
        "rationale": "kept continued and corroborated medications",
        "missing_info": [],
    }
    f[f"verify/{CASE_ID}"] = {"kept_drugs": sorted(CASE_STUDY_PRIOR), "removed_drugs": []}
    return {"fixtures": f}


def main() -> None:
    rng = random.Random(20240611)
    DEMO.mkdir(parents=True, exist_ok=True)
    FIXTURES.mkdir(parents=True, exist_ok=True)
    build_ontology(DEMO / "ontology")
    (DEMO / "vocab.txt").write_text("\n".join(sorted(ATC_L4)) + "\n", encoding="utf-8")

    rx, idmap = build_ids(rng)
    write_tsv(DEMO / "rxcui_atc.tsv", ["rxcui", "atc"], [[k, v] for k, v in idmap.items()])
    write_tsv(DEMO / "twosides.tsv", ["drug_a", "drug_b", "frequency"], build_twosides(rng, rx))
    labels = build_labels(rng, rx)
    (DEMO / "openfda_labels.jsonl").write_text(
        "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in labels), encoding="utf-8"
    )
    write_tsv(DEMO / "medi.tsv", ["diag", "med"], build_medi(rx))
    write_tsv(DEMO / "contra_lexicon.tsv", ["term", "diag"], [[t, k] for t, k in sorted(LEXICON.items())])

    group_plan = [["CVD"], ["CVD", "ENDO"], ["RESP"], ["GI", "ENDO"], ["ONC"], ["MSK"], ["OB"], ["CVD", "RESP", "GI"]]
    cases = [synthetic_case(rng, k + 1, g) for k, g in enumerate(group_plan)] + [icd9_case(9), icd9_case(10)]
    cases.sort(key=lambda c: c["caseId"])
    (DEMO / "cases.jsonl").write_text("".join(json.dumps(c) + "\n" for c in cases), encoding="utf-8")
    (DEMO / "case_study.jsonl").write_text(json.dumps(case_study()) + "\n", encoding="utf-8")
    (FIXTURES / "case_study.json").write_text(
        json.dumps(case_study_fixture(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


if __name__ == "__main__":
    main()
