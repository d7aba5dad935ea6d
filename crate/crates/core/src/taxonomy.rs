//! Class taxonomy and sensor tables of the labelled telemetry corpus.

/// The seven GPU sensors, in archive order.
pub const GPU_SENSORS: [&str; 7] = [
    "utilization_gpu_pct",
    "utilization_memory_pct",
    "memory_free_MiB",
    "memory_used_MiB",
    "temperature_gpu",
    "temperature_memory",
    "power_draw_W",
];

/// The eight CPU metrics recorded per node.
pub const CPU_SENSORS: [&str; 8] = [
    "CPUFrequency",
    "CPUTime",
    "CPUUtilization",
    "RSS",
    "VMSize",
    "Pages",
    "ReadMB",
    "WriteMB",
];

pub const N_GPU_SENSORS: usize = GPU_SENSORS.len();

/// Largest valid class index.
pub const MAX_LABEL: usize = 25;

/// Model family a class belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Vgg,
    Inception,
    ResNet,
    UNet,
    Nlp,
    Gnn,
}

#[derive(Debug, Clone, Copy)]
pub struct ClassInfo {
    pub name: &'static str,
    pub family: Family,
    pub job_count: u32,
}

const fn class(name: &'static str, family: Family, job_count: u32) -> ClassInfo {
    ClassInfo {
        name,
        family,
        job_count,
    }
}

/// The 26 architectures with their labelled job counts.
pub const CLASSES: [ClassInfo; 26] = [
    class("VGG11", Family::Vgg, 185),
    class("VGG16", Family::Vgg, 176),
    class("VGG19", Family::Vgg, 199),
    class("Inception3", Family::Inception, 241),
    class("Inception4", Family::Inception, 243),
    class("ResNet50", Family::ResNet, 111),
    class("ResNet50_v1.5", Family::ResNet, 91),
    class("ResNet101", Family::ResNet, 77),
    class("ResNet101_v2", Family::ResNet, 54),
    class("ResNet152", Family::ResNet, 76),
    class("ResNet152_v2", Family::ResNet, 54),
    class("U3-32", Family::UNet, 165),
    class("U3-64", Family::UNet, 159),
    class("U3-128", Family::UNet, 165),
    class("U4-32", Family::UNet, 163),
    class("U4-64", Family::UNet, 158),
    class("U4-128", Family::UNet, 157),
    class("U5-32", Family::UNet, 158),
    class("U5-64", Family::UNet, 158),
    class("U5-128", Family::UNet, 148),
    class("Bert", Family::Nlp, 185),
    class("DistillBert", Family::Nlp, 241),
    class("Dimenet", Family::Gnn, 33),
    class("Schnet", Family::Gnn, 39),
    class("PNA", Family::Gnn, 27),
    class("NNConv", Family::Gnn, 32),
];

/// Looks a class up by name, ignoring ASCII case and the common
/// "DistilBert"/"DistillBert" spelling variants.
pub fn class_index(name: &str) -> Option<usize> {
    let wanted = normalize(name);
    CLASSES.iter().position(|c| normalize(c.name) == wanted)
}

fn normalize(name: &str) -> String {
    let lower = name.trim().to_ascii_lowercase();
    if lower == "distilbert" {
        "distillbert".to_string()
    } else {
        lower
    }
}
