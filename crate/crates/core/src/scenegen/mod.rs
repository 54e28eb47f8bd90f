//! Synthetic scenes, detector emulation and templated questions.

pub mod detect;
pub mod interpret;
pub mod qa;
pub mod scene;

pub use detect::{render_detections, Detection, DetectionVideo, Embedding, RenderConfig};
pub use qa::{generate_qa, vocabulary, AnswerSpace, Category, QaConfig, QaItem, Template};
pub use scene::{generate_scene, Action, Color, Event, FrameState, SceneConfig, SceneObject, SceneSpec, Shape, Size};
