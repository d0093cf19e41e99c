//! Mesh and cloud formats: write the phantom as STL and OBJ, a sampled cloud
//! as PLY, and read them back.

use spinenav::io::{load_mesh, parse_ply, write_obj, write_ply, write_stl_ascii, PlyFormat};
use spinenav::registration::sample_surface;
use spinenav::sim::lumbar_phantom;
use spinenav::FrameId;

fn main() {
    let dir = std::env::temp_dir().join("spinenav_mesh_io");
    std::fs::create_dir_all(&dir).unwrap();
    let mesh = lumbar_phantom();
    write_stl_ascii(
        &mesh,
        "phantom",
        std::fs::File::create(dir.join("phantom.stl")).unwrap(),
    )
    .unwrap();
    write_obj(&mesh, std::fs::File::create(dir.join("phantom.obj")).unwrap()).unwrap();
    for name in ["phantom.stl", "phantom.obj"] {
        let (back, report) = load_mesh(dir.join(name), FrameId::Spine).unwrap();
        println!(
            "{name}: {} triangles, {} vertices, cleanup {report:?}",
            back.len(),
            back.vertices().len()
        );
    }

    let cloud = sample_surface(&mesh, 5000, 1).unwrap();
    let mut bytes = Vec::new();
    write_ply(&cloud, PlyFormat::BinaryLittleEndian, &mut bytes).unwrap();
    let back = parse_ply(&bytes, FrameId::Spine).unwrap();
    println!(
        "ply: {} points with normals: {}, {} bytes",
        back.len(),
        back.normals.is_some(),
        bytes.len()
    );
}
