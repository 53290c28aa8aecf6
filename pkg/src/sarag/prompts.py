"""Prompt templates for every model call the pipeline makes.

Placeholders are `{name}` tokens; rendering substitutes only the names a
template declares, so literal JSON braces in the bodies are safe.  Callers
may pass extra bindings (e.g. routing hints for file-backed providers);
they are ignored by rendering but visible to providers.
"""

from __future__ import annotations

import re

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class UnknownTemplateError(KeyError):
    pass


class MissingBindingError(ValueError):
    def __init__(self, template_id: str, missing: list[str]):
        self.template_id = template_id
        self.missing = missing
        super().__init__(f"template {template_id!r} missing bindings: {', '.join(missing)}")


TEMPLATES: dict[str, str] = {
    "extract_schema": """You are a data modeling assistant.

TASK: Given a customer support dialogue, infer a relational database table schema to solve the problem. Provide more than ten columns useful to classify and answer future issues, not redundant information.

INSTRUCTIONS:
- Identify the main table that represents the dialogue.
- Generate a table schema using the following JSON structure ONLY:
[
  {
    "table_name": string,
    "Columns": [
      {
        "name": string,
        "type": one of ["int", "string", "float", "boolean", "date", "datetime"],
        "semantic": string,
        "constraints": [string],
        "Note": "Important information"
      }
    ],
    "functional_denpendencies": [string],
    "version": int
  }
]
- Column names: snake_case, concise, descriptive.
- Semantic: describe real-world meaning, prefer ontology-style naming.
- Constraints: use primary key, foreign key, not null, unique when applicable.
- Output valid JSON only, no explanations.

DIALOGUE: {dialog}""",
    "normalize_schema": """You are a database schema normalization assistant.

TASK: Normalize the given raw database schema in ONE step.

RULES:
- Column names: snake_case, concise, descriptive.
- Data types: normalize to one of ["int", "string", "float", "boolean", "date", "datetime"].
- Semantic: provide clear standardized meaning, prefer ontology-style naming.
- Constraints: preserve valid constraints, normalize naming.
- Structure: preserve table_name, version, functional dependencies; fix spelling issues.
- Output valid JSON only.

INPUT SCHEMA: {raw_schema}""",
    "quality_check": """You are a database schema quality evaluator.

TASK: Evaluate the quality of EACH COLUMN in the new schema based ONLY on its usefulness for answering the given problem.

COLUMN-LEVEL METRICS (0-1):
1. relevance: How directly the column relates to the problem.
2. answerability: Contribution to answering the problem.
3. overall: Holistic judgment for this problem.

Output: For each column, add field quality_score with relevance, answerability, overall, and justification. Return valid JSON only.

CURRENT META DATA: {current_meta_data}

NEW SCHEMA TO EVALUATE: {new_schema}

PROBLEM / QUERY: {problem}""",
    "governance_merge": """You are a schema governance and evolution assistant.

TASK: Given current meta-data, a new schema with column-level quality scores, and problem context, decide how to evolve the meta-data to retain columns useful for identifying or solving the issue. Every column should be useful.

Steps (perform all in one pass):
1. Decide if the new schema is acceptable.
2. Detect semantic overlap with existing schemas.
3. For each overlap, choose one operation: ADD, UPDATE, MERGE, KEEP, DELETE.
4. Produce the FINAL updated meta-data (same format as current meta-data, without quality scores).
5. Ensure no more than 20 columns.

Decision rules:
- Use column-level quality_score.overall as primary signal.
- Prefer schemas with higher average column quality, better coverage, and clearer semantics.
- Delete only strictly worse redundant columns.
- Avoid introducing new tables.

Output: valid JSON ONLY, final meta-data list.

CURRENT META DATA: {current_meta_data}

NEW SCHEMA (WITH QUALITY SCORES): {quality_annotated_schema}

PROBLEM CONTEXT: {problem}""",
    "generate_row": """You are a data extraction assistant.

TASK: Generate ONE structured data row from the given dialogue.

IMPORTANT RULES:
- Meta-data is READ-ONLY context.
- Do NOT modify, normalize, rename, or reinterpret the schema.
- Use column names EXACTLY as provided.
- If a value cannot be inferred, output null.
- Follow declared data types strictly.
- Return VALID JSON ONLY.
- No explanations, no comments.

META-DATA: {meta_data}

DIALOGUE: {dialogue}

OUTPUT FORMAT:
{
  "row": {
    "<column_name>": <value | null>
  }
}""",
    "judge_table": """You are a data validation assistant.

TASK: Determine whether the table satisfies the metadata requirements (e.g., all non-null columns are filled).

META-DATA: {meta_data}

TABLE: {dialogue}

OUTPUT FORMAT:
- Satisfy the metadata: yes or no.
- If no, explain which parts do not satisfy the metadata.""",
    "judge_semantic": """You are a data validation assistant.

TASK: For EACH candidate cell value below, decide whether the value is directly supported by the dialogue. A value is supported only if the dialogue states it or clearly implies it. Answer per cell with yes or no.

DIALOGUE: {dialogue}

CANDIDATE CELLS (JSON map of column name to value): {cells}

OUTPUT FORMAT (valid JSON only):
{
  "verdicts": {
    "<column_name>": "yes or no"
  }
}""",
    "judge_correctness": """You are an answer quality judge.

TASK: Score the answer for factual accuracy and informativeness with respect to the question and the supplied evidence. Reference keywords, when present, indicate facts a correct answer should mention.

QUESTION: {query}

ANSWER: {answer}

EVIDENCE: {evidence}

REFERENCE KEYWORDS: {gold_keywords}

OUTPUT FORMAT (valid JSON only):
{
  "score": <number between 0 and 1>,
  "justification": string
}""",
    "respond": """You are a support assistant answering from recorded cases.

TASK: Answer the question using ONLY the structured evidence and case records below. Do not invent facts. If the evidence is insufficient, say so.

After the answer, emit one final line exactly of the form:
sources: docs=[<doc_id>;<doc_id>] triples=[<index>;<index>]
listing every case record and evidence triple the answer relies on.

QUESTION: {query}

EVIDENCE TRIPLES (indexed):
{triples}

CASE RECORDS:
{documents}""",
}

# Placeholder sets are derived from the bodies; bodies avoid stray {word}
# tokens outside intended placeholders.
_PLACEHOLDERS: dict[str, frozenset[str]] = {
    template_id: frozenset(_PLACEHOLDER_RE.findall(body))
    for template_id, body in TEMPLATES.items()
}


def template_ids() -> list[str]:
    return sorted(TEMPLATES)


def placeholders_of(template_id: str) -> frozenset[str]:
    if template_id not in TEMPLATES:
        raise UnknownTemplateError(template_id)
    return _PLACEHOLDERS[template_id]


def render_prompt(template_id: str, bindings: dict[str, str]) -> str:
    """Substitute bindings into a template; every declared placeholder must bind."""
    if template_id not in TEMPLATES:
        raise UnknownTemplateError(template_id)
    required = _PLACEHOLDERS[template_id]
    missing = sorted(required - set(bindings))
    if missing:
        raise MissingBindingError(template_id, missing)

    def _sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name in required:
            return str(bindings[name])
        return match.group(0)

    rendered = _PLACEHOLDER_RE.sub(_sub, TEMPLATES[template_id])
    return rendered
