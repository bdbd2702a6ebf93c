use super::{Light, Primitive, SceneDescription, Shape, Table, Texture};

pub const DEFAULT_WIDTH: u32 = 160;
pub const DEFAULT_HEIGHT: u32 = 120;
pub const DEFAULT_FOCAL: f64 = 180.0;

fn checker(a: [f64; 3], b: [f64; 3], period: f64) -> Texture {
    Texture::Checker { a, b, period }
}

fn prim(shape: Shape, albedo: Texture, id: u8, name: &str) -> Primitive {
    Primitive {
        shape,
        albedo,
        object_id: id,
        name: name.to_string(),
    }
}

/// Ball, book, laptop and cup on a checkered table at z = 0, all within
/// 25 cm of the origin.
pub fn four_objects() -> SceneDescription {
    let primitives = vec![
        prim(
            Shape::Sphere {
                center: [0.12, 0.08, 0.045],
                radius: 0.045,
            },
            checker([0.9, 0.3, 0.2], [0.95, 0.85, 0.3], 0.02),
            1,
            "ball",
        ),
        prim(
            Shape::Box {
                min: [-0.18, 0.02, 0.0],
                max: [-0.03, 0.22, 0.04],
            },
            Texture::Stripes {
                a: [0.2, 0.35, 0.8],
                b: [0.9, 0.9, 0.85],
                period: 0.03,
                axis: 1,
            },
            2,
            "book",
        ),
        prim(
            Shape::Box {
                min: [-0.05, -0.22, 0.0],
                max: [0.17, -0.07, 0.015],
            },
            checker([0.25, 0.25, 0.28], [0.6, 0.6, 0.65], 0.03),
            3,
            "laptop",
        ),
        prim(
            Shape::Box {
                min: [-0.05, -0.225, 0.015],
                max: [0.17, -0.21, 0.16],
            },
            checker([0.15, 0.5, 0.55], [0.55, 0.8, 0.85], 0.04),
            3,
            "laptop",
        ),
        prim(
            Shape::Cylinder {
                base: [-0.15, -0.12, 0.0],
                axis: [0.0, 0.0, 1.0],
                radius: 0.04,
                height: 0.09,
            },
            checker([0.3, 0.7, 0.3], [0.95, 0.95, 0.95], 0.025),
            4,
            "cup",
        ),
        prim(
            Shape::Box {
                min: [-0.115, -0.127, 0.025],
                max: [-0.09, -0.113, 0.07],
            },
            Texture::Uniform {
                color: [0.3, 0.7, 0.3],
            },
            4,
            "cup",
        ),
    ];
    SceneDescription {
        primitives,
        light: Light::default(),
        table: Some(Table {
            height: 0.0,
            texture: checker([0.55, 0.45, 0.35], [0.7, 0.6, 0.5], 0.05),
        }),
        background: [0.85, 0.88, 0.92],
    }
}
