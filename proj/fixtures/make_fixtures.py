#!/usr/bin/env python3
"""Regenerates the synthetic corpora and labeled reports in this directory.

The shipped files are static; rerun only when the shape of the smoke data
needs to change. Everything is seeded, so a rerun reproduces the same bytes.
"""
import json
import random


GENERAL_WORDS = (
    "the a this that market council river valley morning evening committee "
    "report season harvest road bridge library garden train station weather "
    "storm coast mountain village city street trade price grain timber stone "
    "glass paper letter news journal story music theatre school lesson "
    "teacher student worker farmer sailor captain doctor lawyer judge law "
    "rule order peace treaty border nation region province district council "
    "meeting debate vote election leader minister office building tower "
    "clock bell window door roof wall floor table chair lamp candle fire "
    "water bread cheese apple orange wheat barley horse cattle sheep wool "
    "cotton silk wine oil salt sugar tea coffee ship boat harbor cargo "
    "voyage journey traveler map compass star moon sun cloud rain snow wind "
    "summer winter spring autumn year month week day hour minute moment"
).split()

DOMAIN_SENTENCES = [
    "axial sections show {mod} dilatation of the lateral ventricles",
    "periventricular white matter contains {mod} hyperintense foci",
    "a {mod} lacunar infarct is seen in the {site}",
    "diffuse cerebral atrophy is noted with {mod} sulcal widening",
    "an extraaxial dural based mass is present along the {site} convexity",
    "the {site} demonstrates {mod} encephalomalacic changes",
    "no acute intracranial hemorrhage is identified",
    "a {mod} subdural collection layers over the {site} hemisphere",
    "subarachnoid blood products are seen within the {site} sulci",
    "the cisterna magna is prominent measuring above one centimeter",
    "ventricular size and configuration are within normal limits",
    "chronic ischemic gliotic changes involve the {site} white matter",
    "blood products layer within the occipital horns of both ventricles",
    "an epidural lentiform collection elevates the dura near the {site}",
    "midline structures are preserved without shift",
    "the posterior fossa structures appear unremarkable",
    "scattered leukoaraiosis is present in the deep white matter",
    "sequelae of prior trauma are seen as {mod} gliosis in the {site}",
    "basal cisterns remain patent without effacement",
    "the study is compared with the prior examination of the same region",
]

MODS = ["mild", "moderate", "marked", "subtle", "prominent", "stable", "old"]
SITES = [
    "left frontal lobe", "right parietal lobe", "left temporal region",
    "right occipital lobe", "centrum semiovale", "basal ganglia",
    "corona radiata", "left cerebellar hemisphere", "pons", "thalamus",
]

LABELS = [
    "Intraventricular", "Gliosis", "Epidural", "Hydrocephalus",
    "Encephalomalacia", "Chronic ischemic changes", "Lacuna",
    "Leukoaraiosis", "Mega cisterna magna", "Meningioma",
    "Subarachnoid Bleeding", "Subdural", "No Findings",
]

TRIGGERS = {
    "Hydrocephalus": "marked dilatation of the ventricular system with "
                     "transependymal flow suggests hydrocephalus",
    "Chronic ischemic changes": "confluent hyperintense lesions reflect "
                                "chronic ischemic small vessel changes",
    "Lacuna": "a small chronic lacunar infarct is present in the basal "
              "ganglia region",
    "Subdural": "a crescentic subdural collection is seen along the "
                "cerebral convexity",
    "Meningioma": "a dural based homogeneously enhancing mass is "
                  "consistent with meningioma",
    "Leukoaraiosis": "diffuse periventricular leukoaraiosis is present in "
                     "the deep white matter",
}
NO_FINDINGS_TEXT = ("ventricles sulci and cisterns are within normal limits "
                    "and no focal parenchymal lesion is identified")


def sentence(rng, words, lo=8, hi=16):
    n = rng.randint(lo, hi)
    return " ".join(rng.choice(words) for _ in range(n))


def paragraph(rng, words, min_chars):
    parts = []
    while sum(len(p) for p in parts) < min_chars:
        parts.append(sentence(rng, words) + ".")
    return " ".join(parts)


def domain_paragraph(rng, min_chars=140):
    parts = []
    while sum(len(p) for p in parts) < min_chars:
        t = rng.choice(DOMAIN_SENTENCES)
        parts.append(t.format(mod=rng.choice(MODS),
                              site=rng.choice(SITES)) + ".")
    return " ".join(parts)


def main():
    rng = random.Random(7)

    with open("general.txt", "w") as f:
        for _ in range(150):
            f.write(paragraph(rng, GENERAL_WORDS, 180) + "\n\n")

    with open("domain.txt", "w") as f:
        for _ in range(40):
            f.write(domain_paragraph(rng) + "\n\n")

    common = [k for k in TRIGGERS]
    with open("reports.jsonl", "w") as f:
        for i in range(80):
            labels = {name: 0 for name in LABELS}
            if rng.random() < 0.3:
                labels["No Findings"] = 1
                text = NO_FINDINGS_TEXT
            else:
                chosen = rng.sample(common, rng.randint(1, 2))
                parts = []
                for name in chosen:
                    labels[name] = 1
                    parts.append(TRIGGERS[name] + ".")
                parts.append(domain_paragraph(rng, min_chars=60))
                text = " ".join(parts)
            row = {"id": f"rep-{i:03d}", "text": text, "labels": labels}
            f.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    main()
