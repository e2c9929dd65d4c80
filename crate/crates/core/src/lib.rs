//! Interactive figures that carry their data slice, the program that produced it and a
//! mapping from marks to rows, with a version ledger, cross-figure coordination and a
//! planning loop over a pluggable intent backend.

pub mod action;
pub mod agent;
pub mod bundle;
pub mod catalog;
pub mod chart;
pub mod compile;
pub mod coordination;
pub mod demo;
pub mod digest;
pub mod engine;
pub mod eval;
pub mod explore;
pub mod expr;
pub mod figure;
pub mod interaction;
pub mod ledger;
pub mod plan;
pub mod predicate;
pub mod reference;
pub mod session;
pub mod slice;
pub mod store;
pub mod testkit;
pub mod value;

pub use action::{validate_sequence, Action, ActionRecord, DataBinding, ProvenanceProgram, StepStatus, ValidationReport};
pub use catalog::{CatalogError, CatalogManifest, CatalogSchema, Table, TableCatalog};
pub use chart::{
    materialize_marks, summarize_insight, Channel, ChartDoc, ChartError, ChartType, EncodingSpec, InteractionDecl,
    InteractionKind, MarkMap, MarkRecord, Scale,
};
pub use compile::{compile_to_chart, compile_to_query, CompileError, CompiledQuery};
pub use digest::Digest;
pub use engine::{execute_plan, ExecError};
pub use expr::{evaluate_expression, Expr, ExprError};
pub use figure::{replay_figure, FigureMeta, FigureState, Operation, ReplayError, ReplayOutcome};
pub use interaction::{interaction_to_predicate, Gesture, InteractionError, InteractionEvent};
pub use plan::{AggFunc, AggSpec, AnalyzeOp, PlanError, PlanNode, QueryPlan, SortKey};
pub use predicate::{Atom, CmpOp, Predicate, PredicateError};
pub use reference::reference_execute;
pub use slice::{compute_digest, rounded_digest, DataSlice, Lineage};
pub use value::{Column, Row, RowKey, Schema, SemanticType, Value, ROW_KEY_COLUMN};
