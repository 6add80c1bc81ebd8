#pragma once

#include <iosfwd>

#include "magfield/field.hpp"

namespace magfield {

/// Reads a measured-field table: one row per pixel with columns
/// `x_index y_index Bx By [Bz]` (tesla, whitespace or comma separated).
/// Lines starting with '#' and a leading non-numeric header line are skipped.
/// A missing Bz column is zero-filled (in-plane magnetized setups).
///
/// The index set must cover a full rectangle exactly once; otherwise an
/// IngestionError lists the offending pixels. The returned sample carries
/// no flanking layers.
Sample import_measured(std::istream& in, double spacing);

/// Writes the measurement plane of `plane` in the format read above.
void write_measured_table(std::ostream& out, const FieldPlane& plane);

}  // namespace magfield
