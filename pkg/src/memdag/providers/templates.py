"""Prompt templates. The first line names the template so backends and
fixtures can tell calls apart without parsing prose."""

from __future__ import annotations

import json
from typing import Any

SUMMARIZE = """#template:summarize
You extract long-term memory from one dialogue turn.
Write one short, self-contained statement per distinct fact, event or state
change that the turn states explicitly. Do not infer attributes that are not
said. Return JSON: {"summaries": [{"text": str, "kind": "profile"|"event"|"object"}]}.
Return an empty list when the turn holds nothing worth remembering."""

CONSOLIDATE = """#template:consolidate
You maintain a long-term memory store. The members below are related memory
items in chronological order; origin "new" items were just extracted,
origin "existing" items are already stored. Decide one action per member:
new items may be "add" or "noop"; existing items may be "update", "delete"
or "noop". Merge duplicates, resolve contradictions in favour of later
statements, and never invent content.
Return JSON: {"actions": [{"member_index": int, "verb": str,
"target": str|null, "new_content": str|null}]} with exactly one action per
member. "target" must be the member's ref for update/delete."""

DECIDE = """#template:decide
You maintain a long-term memory store. Given one candidate memory and the
most related stored memories, decide whether to add the candidate as a new
memory, update one stored memory, or do nothing.
Return JSON: {"verb": "add"|"update"|"noop", "target": str|null,
"new_content": str|null}."""

AGENT = """#template:agent
You answer questions about a user's long-term memory and recorded video.
Available actions:
  video.retrieval {"query": str}  -- find clip timestamps relevant to a query
  video.rag {"query": str}        -- summarise the most relevant memory entries
  video.qa {"query": str, "start_s": num, "end_s": num, "asset"?: str}
                                  -- ask a visual question about one clip
  finish {}                       -- stop when you can answer
Return JSON: {"action": str, "args": object}."""

ANSWER = """#template:answer
Answer the original query using only the observations gathered so far.
Be concise. Say so when the observations do not contain the answer."""

RAG = """#template:video_rag
Summarise the memory entries below into a short grounded answer to the
query. Only use facts present in the entries."""


def payload(data: Any) -> str:
    return json.dumps(data, ensure_ascii=False, sort_keys=True)


def read_payload(text: str) -> Any:
    return json.loads(text)
