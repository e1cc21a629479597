use super::{Action, FormatPenalty, PenaltyKind, Scene, SceneObject, ToolCall};
use crate::assets::AssetCatalog;

/// The transition function: apply one tool call to a scene.
///
/// The input is never modified. Calls that reference an unknown uid (or try
/// to claim a uid that is already taken) leave the scene untouched and
/// yield an `InvalidId` penalty.
pub fn apply_tool_call(
    scene: &Scene,
    call: &ToolCall,
    assets: &AssetCatalog,
) -> (Scene, Vec<FormatPenalty>) {
    let invalid = |uid: &str| {
        vec![FormatPenalty::new(
            PenaltyKind::InvalidId,
            format!("{}: no object with uid `{uid}`", call.id),
        )]
    };
    if let Some(uid) = call.action.target() {
        if !scene.contains(uid) {
            return (scene.clone(), invalid(uid));
        }
    }
    let mut next = scene.clone();
    match &call.action {
        Action::AddObject { description, position, rotation, size, uid } => {
            let uid = match uid {
                Some(uid) if next.contains(uid) => {
                    return (
                        scene.clone(),
                        vec![FormatPenalty::new(
                            PenaltyKind::InvalidId,
                            format!("{}: uid `{uid}` already in use", call.id),
                        )],
                    )
                }
                Some(uid) => uid.clone(),
                None => fresh_uid(&next, assets.category_of(description)),
            };
            next.objects.push(SceneObject {
                uid,
                description: description.clone(),
                position: position.quantized(),
                rotation: *rotation,
                size: assets.realize(description, *size),
            });
        }
        Action::RemoveObject { uid } => {
            next.remove(uid);
        }
        Action::MoveObject { uid, new_position } => {
            next.object_mut(uid).expect("checked above").position = new_position.quantized();
        }
        Action::RotateObject { uid, new_rotation } => {
            next.object_mut(uid).expect("checked above").rotation = *new_rotation;
        }
        Action::ScaleObject { uid, new_size } => {
            next.object_mut(uid).expect("checked above").size = new_size.quantized();
        }
        Action::ReplaceObject { uid, new_description } => {
            let obj = next.object_mut(uid).expect("checked above");
            obj.size = assets.realize(new_description, obj.size);
            obj.description = new_description.clone();
        }
        Action::Terminate { .. } => {}
    }
    (next, Vec::new())
}

/// `{category}_{n}` with the smallest free `n >= 1`; spaces become underscores.
pub fn fresh_uid(scene: &Scene, category: &str) -> String {
    let slug: String = category
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    (1..)
        .map(|n| format!("{slug}_{n}"))
        .find(|uid| !scene.contains(uid))
        .expect("unbounded range")
}
