"""Structured-output contracts for every LLM call the store makes."""

KINDS = ["profile", "event", "object"]
TOOL_NAMES = ["video.retrieval", "video.rag", "video.qa", "finish"]

_nullable_str = {"type": ["string", "null"]}

SCHEMAS: dict[str, dict] = {
    "summaries": {
        "type": "object",
        "required": ["summaries"],
        "properties": {
            "summaries": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["text"],
                    "properties": {
                        "text": {"type": "string", "minLength": 1},
                        "kind": {"enum": KINDS},
                    },
                },
            }
        },
    },
    "consolidation": {
        "type": "object",
        "required": ["actions"],
        "properties": {
            "actions": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["member_index", "verb"],
                    "properties": {
                        "member_index": {"type": "integer", "minimum": 0},
                        "verb": {"enum": ["add", "delete", "update", "noop"]},
                        "target": _nullable_str,
                        "new_content": _nullable_str,
                    },
                },
            }
        },
    },
    "decision": {
        "type": "object",
        "required": ["verb"],
        "properties": {
            "verb": {"enum": ["add", "update", "noop"]},
            "target": _nullable_str,
            "new_content": _nullable_str,
        },
    },
    "action": {
        "type": "object",
        "required": ["action", "args"],
        "properties": {
            "action": {"enum": TOOL_NAMES},
            "args": {"type": "object"},
        },
    },
}

TOOL_ARG_SCHEMAS: dict[str, dict] = {
    "video.retrieval": {
        "type": "object",
        "required": ["query"],
        "properties": {"query": {"type": "string", "minLength": 1}},
    },
    "video.rag": {
        "type": "object",
        "required": ["query"],
        "properties": {"query": {"type": "string", "minLength": 1}},
    },
    "video.qa": {
        "type": "object",
        "required": ["query", "start_s", "end_s"],
        "properties": {
            "query": {"type": "string", "minLength": 1},
            "start_s": {"type": "number", "minimum": 0},
            "end_s": {"type": "number", "minimum": 0},
            "asset": {"type": "string"},
        },
    },
    "finish": {"type": "object"},
}
