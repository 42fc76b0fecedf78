"""Prompt templates.  Treated as configuration: wording may be tuned freely,
but the markers parsed by mocks and parsers (``TEXT:``, ``MEMBERS:``,
``MODULE A:``/``MODULE B:``, ``EVIDENCE:``) must stay stable."""

RECORD_DELIM = "<|>"
COMPLETION_MARKER = "<|COMPLETE|>"

EXTRACTION_SYSTEM = "You are an information extraction system that builds knowledge graphs from text."

EXTRACTION_USER = """-Goal-
Given a text document, identify all entities in the text and all relationships among the identified entities.

-Steps-
1. Identify all entities. For each entity, extract:
- entity_name: name of the entity, capitalized
- entity_type: a short type tag such as person, organization, location, event, concept
- entity_description: comprehensive description of the entity's attributes and activities
Format each entity on its own line as ("entity"{d}<entity_name>{d}<entity_type>{d}<entity_description>)

2. From the entities identified in step 1, identify all pairs of (source_entity, target_entity) that are clearly related.
For each pair, extract:
- source_entity, target_entity: names as identified in step 1
- relationship_description: why the source and target are related, including any cause and effect
- relationship_strength: a number between 1 and 10
Format each relationship on its own line as ("relationship"{d}<source_entity>{d}<target_entity>{d}<relationship_description>{d}<relationship_strength>)

3. When finished, output {done}

TEXT:
{text}
"""

SUMMARY_SYSTEM = "You write concise, factual summaries of groups of related knowledge-graph elements."

SUMMARY_USER = """Write a single-paragraph summary (at most {max_chars} characters) of the community described below. Mention the key entities, what they do, and how they depend on each other.

MEMBERS:
{members}
END
"""

GATE_SYSTEM = "You are a careful analyst of logical and causal dependencies between topics."

GATE_USER = """Decide whether there is a direct CAUSAL or logical dependency between the two knowledge modules below (one describes events or mechanisms that bring about, enable or explain those in the other). Topical similarity alone is NOT causal.

MODULE A:
{a}

MODULE B:
{b}

Answer with exactly one word:
forward - A causally influences B
backward - B causally influences A
both - influence runs in both directions
none - no causal dependency
"""

SELECT_SYSTEM = "You are a causality analyst that selects evidence supporting an answer."

SELECT_SPURIOUS_USER = """Question: {question}

Below is a table of candidate evidence. Nodes are N-ids, relations are R-ids.

EVIDENCE:
{table}

Identify the items that form valid causal paths connecting the question to its answer. Also identify items that are only spuriously associated (topical overlap, high-degree hubs, coincidental co-occurrence) and must not be used.
Respond with JSON only: {{"precise": [ids of causal supports], "ct_precise": [ids of spurious items]}}
"""

SELECT_STANDARD_USER = """Question: {question}

Below is a table of candidate evidence. Nodes are N-ids, relations are R-ids.

EVIDENCE:
{table}

Output only the IDs of the items that form valid causal paths connecting the question to its answer, as a JSON list such as ["N1", "R2", "N3"].
"""

ANSWER_SYSTEM = "You answer questions using only the evidence you are given."

ANSWER_USER = """Answer the question using ONLY the evidence below. If the evidence does not contain the answer, say that you cannot answer from the evidence.

EVIDENCE:
{evidence}

Question: {question}
Answer:"""

NO_EVIDENCE = "(no verified evidence)"
