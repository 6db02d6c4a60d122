"""Reference-grammar cases: text -> expected tokens in document order."""

CASES = [
    ("Art. 9", ["A9"]),
    ("Article 9", ["A9"]),
    ("see article 7", ["A7"]),
    ("ARTICLE 7", ["A7"]),
    ("Articles 44 to 49", ["A44", "A45", "A46", "A47", "A48", "A49"]),
    ("Articles 44-49", ["A44", "A45", "A46", "A47", "A48", "A49"]),
    ("Articles 44–49", ["A44", "A45", "A46", "A47", "A48", "A49"]),
    ("Arts. 12-14", ["A12", "A13", "A14"]),
    ("Articles 12 to 14", ["A12", "A13", "A14"]),
    ("Articles 13 and 14", ["A13", "A14"]),
    ("Articles 15, 16 and 17", ["A15", "A16", "A17"]),
    ("Articles 77, 78 and 79", ["A77", "A78", "A79"]),
    ("Articles 46 or 47", ["A46", "A47"]),
    ("Art. 9 and Art. 10", ["A9", "A10"]),
    ("processing on a large scale of special categories of data (Art. 9) and personal data relating to "
     "criminal convictions and offences (Art. 10)", ["A9", "A10"]),
    ("Article 9(2)", ["A9.2"]),
    ("Article 45(3)", ["A45.3"]),
    ("Art.5(1)(b)", ["A5.1"]),
    ("Article 4(11)", ["A4.11"]),
    ("Articles 9 and 9", ["A9"]),
    ("Article 9 and paragraph 2", ["A9"]),
    ("paragraph 1", []),
    ("in accordance with paragraph 1", []),
    ("point (a) of paragraph 1", []),
    ("Recital 47", []),
    ("Recitals 47 and 48", []),
    ("Chapter V", []),
    ("Article 28 of Directive 95/46/EC", []),
    ("no references here", []),
    ("", []),
]
