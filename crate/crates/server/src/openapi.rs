//! OpenAPI description built from the route table. The committed copy lives in
//! `openapi.json` next to this crate's manifest and a test keeps the two equal.

use serde_json::{json, Map, Value};

pub struct RouteDoc {
    pub method: &'static str,
    pub path: &'static str,
    pub summary: &'static str,
    pub request: Option<(&'static str, &'static str)>,
    pub responses: &'static [(u16, &'static str)],
}

const JSON: &str = "application/json";

pub const ROUTES: &[RouteDoc] = &[
    RouteDoc {
        method: "get",
        path: "/api/v1/openapi.json",
        summary: "This description",
        request: None,
        responses: &[(200, "OpenAPI document")],
    },
    RouteDoc {
        method: "post",
        path: "/api/v1/sessions",
        summary: "Create a session; body is an optional SessionConfig",
        request: Some((JSON, "SessionConfig")),
        responses: &[(201, "SessionInfo"), (400, "Unknown backend or bad loop config")],
    },
    RouteDoc {
        method: "get",
        path: "/api/v1/sessions/{id}",
        summary: "Session info with head version and figure ids",
        request: None,
        responses: &[(200, "SessionInfo"), (404, "Unknown session")],
    },
    RouteDoc {
        method: "post",
        path: "/api/v1/sessions/{id}/messages",
        summary: "Run a turn. Streams action_selected, action_result, evaluation, figure_ready and one closing done or error event; ?stream=false returns all events and the reply as JSON",
        request: Some((JSON, "MessageRequest")),
        responses: &[
            (200, "text/event-stream of StreamEvent, or {events, reply, links}"),
            (400, "Empty or malformed message"),
            (404, "Unknown session or figure"),
            (409, "A turn is already running for this session"),
            (422, "Invalid gesture bounds"),
        ],
    },
    RouteDoc {
        method: "post",
        path: "/api/v1/figures/{id}/gestures",
        summary: "Echo the predicate a gesture selects and propagate it along coordination schemas",
        request: Some((JSON, "Gesture fields (type, ...) plus optional at")),
        responses: &[(200, "GestureReply"), (404, "Unknown figure"), (422, "Invalid gesture")],
    },
    RouteDoc {
        method: "get",
        path: "/api/v1/figures/{id}/bundle",
        summary: "Chart, Vega-Lite export, query text, data CSV, program and meta of a figure; ?file=<name> returns one file",
        request: None,
        responses: &[(200, "{figure_id, files}"), (404, "Unknown figure or file")],
    },
    RouteDoc {
        method: "get",
        path: "/api/v1/artifacts/{id}/versions",
        summary: "Every version of an artifact with parents and figure operations",
        request: None,
        responses: &[(200, "{artifact_id, head_version, versions}"), (404, "Unknown artifact")],
    },
    RouteDoc {
        method: "post",
        path: "/api/v1/artifacts/{id}/replay",
        summary: "Replay a version (default head) and compare digests",
        request: Some((JSON, "{version_id?}")),
        responses: &[(200, "{ok, report}"), (404, "Unknown artifact or version")],
    },
    RouteDoc {
        method: "get",
        path: "/api/v1/artifacts/{id}/export",
        summary: "Download the artifact bundle",
        request: None,
        responses: &[(200, "application/zip"), (404, "Unknown artifact")],
    },
    RouteDoc {
        method: "post",
        path: "/api/v1/artifacts/import",
        summary: "Merge a bundle zip into the workspace",
        request: Some(("application/zip", "bundle")),
        responses: &[
            (200, "ImportSummary"),
            (400, "Empty body"),
            (409, "Diverged artifact or conflicting table"),
            (422, "Malformed bundle"),
        ],
    },
];

pub fn openapi() -> Value {
    let mut paths: Map<String, Value> = Map::new();
    for r in ROUTES {
        let mut op = json!({
            "summary": r.summary,
            "responses": r.responses.iter().map(|(code, d)| (code.to_string(), json!({ "description": d }))).collect::<Map<_, _>>(),
        });
        if r.path.contains("{id}") {
            op["parameters"] = json!([{ "name": "id", "in": "path", "required": true, "schema": { "type": "string" } }]);
        }
        if let Some((media, desc)) = r.request {
            op["requestBody"] = json!({ "description": desc, "content": { media: {} } });
        }
        let entry = paths.entry(r.path.to_string()).or_insert_with(|| json!({}));
        entry[r.method] = op;
    }
    json!({
        "openapi": "3.0.3",
        "info": { "title": "provfig", "version": env!("CARGO_PKG_VERSION") },
        "paths": paths,
    })
}
