#include "ulv/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ulv {

namespace {

class ParseError : public std::runtime_error {
public:
    ParseError(const std::filesystem::path& path, size_t line, const std::string& message) :
        std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + message) {}
};

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream input(path);
    if (!input) {
        throw std::runtime_error("cannot open '" + path.string() + "' for reading");
    }
    return input;
}

std::ofstream open_output(const std::filesystem::path& path) {
    std::ofstream output(path);
    if (!output) {
        throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    }
    return output;
}

void close_output(std::ofstream& output, const std::filesystem::path& path) {
    output.close();
    if (!output) {
        throw std::runtime_error("failed to write '" + path.string() + "'");
    }
}

bool next_line(std::istream& input, std::string& line, size_t& counter) {
    if (!std::getline(input, line)) {
        return false;
    }
    ++counter;
    if (!line.empty() && line.back() == '\r') {
        line.pop_back();
    }
    return true;
}

std::vector<std::string> split(const std::string& line, char delim = '\t') {
    std::vector<std::string> output;
    size_t start = 0;
    while (true) {
        const size_t end = line.find(delim, start);
        if (end == std::string::npos) {
            output.push_back(line.substr(start));
            return output;
        }
        output.push_back(line.substr(start, end - start));
        start = end + 1;
    }
}

std::vector<std::string> split_whitespace(const std::string& line) {
    std::vector<std::string> output;
    std::istringstream stream(line);
    std::string token;
    while (stream >> token) {
        output.push_back(token);
    }
    return output;
}

bool parse_double(const std::string& token, double& value) {
    const char* first = token.data();
    const char* last = first + token.size();
    if (first != last && *first == '+') {
        ++first;
    }
    auto res = std::from_chars(first, last, value);
    return res.ec == std::errc() && res.ptr == last && first != last;
}

double parse_double_or_throw(const std::string& token, const std::filesystem::path& path, size_t line, const std::string& what) {
    double value;
    if (!parse_double(token, value)) {
        throw ParseError(path, line, "cannot parse " + what + " '" + token + "' as a number");
    }
    return value;
}

long long parse_index_or_throw(const std::string& token, const std::filesystem::path& path, size_t line) {
    long long value;
    auto res = std::from_chars(token.data(), token.data() + token.size(), value);
    if (res.ec != std::errc() || res.ptr != token.data() + token.size()) {
        throw ParseError(path, line, "cannot parse '" + token + "' as an integer");
    }
    return value;
}

void check_value(double value, bool allow_negative, const std::filesystem::path& path, size_t line) {
    if (!std::isfinite(value)) {
        throw ParseError(path, line, "non-finite value");
    }
    if (!allow_negative && value < 0) {
        throw ParseError(path, line, "negative value " + format_number(value));
    }
}

std::string full_precision(double x) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.17g", x);
    return buffer;
}

std::vector<std::string> read_id_file(const std::filesystem::path& path) {
    auto input = open_input(path);
    std::vector<std::string> output;
    std::string line;
    size_t counter = 0;
    while (next_line(input, line, counter)) {
        if (line.empty()) {
            throw ParseError(path, counter, "empty identifier");
        }
        output.push_back(line);
    }
    return output;
}

CountMatrix read_dense(const std::filesystem::path& path, bool allow_negative) {
    auto input = open_input(path);
    std::string line;
    size_t counter = 0;
    if (!next_line(input, line, counter)) {
        throw ParseError(path, 1, "missing header row of cell ids");
    }

    CountMatrix output;
    auto header = split(line);
    output.cell_ids.assign(header.begin() + 1, header.end());
    const size_t ncells = output.cell_ids.size();

    std::vector<Eigen::Triplet<double>> triplets;
    while (next_line(input, line, counter)) {
        if (line.empty()) {
            throw ParseError(path, counter, "empty line");
        }
        auto fields = split(line);
        if (fields.size() != ncells + 1) {
            throw ParseError(path, counter, "expected " + std::to_string(ncells + 1) + " fields, found " + std::to_string(fields.size()));
        }
        const Eigen::Index row = output.gene_ids.size();
        output.gene_ids.push_back(fields[0]);
        for (size_t c = 0; c < ncells; ++c) {
            const double value = parse_double_or_throw(fields[c + 1], path, counter, "value");
            check_value(value, allow_negative, path, counter);
            if (value != 0) {
                triplets.emplace_back(row, c, value);
            }
        }
    }

    output.values.resize(output.gene_ids.size(), ncells);
    output.values.setFromTriplets(triplets.begin(), triplets.end());
    output.values.makeCompressed();
    output.validate(allow_negative);
    return output;
}

CountMatrix read_mtx(const std::filesystem::path& path, bool allow_negative) {
    auto input = open_input(path);
    std::string line;
    size_t counter = 0;
    if (!next_line(input, line, counter)) {
        throw ParseError(path, 1, "missing Matrix Market banner");
    }
    {
        auto banner = split_whitespace(line);
        for (auto& b : banner) {
            for (auto& c : b) {
                c = std::tolower(static_cast<unsigned char>(c));
            }
        }
        if (banner.size() != 5 || banner[0] != "%%matrixmarket" || banner[1] != "matrix" || banner[2] != "coordinate" ||
            (banner[3] != "real" && banner[3] != "integer") || banner[4] != "general") {
            throw ParseError(path, counter, "expected '%%MatrixMarket matrix coordinate real|integer general'");
        }
    }

    do {
        if (!next_line(input, line, counter)) {
            throw ParseError(path, counter + 1, "missing size line");
        }
    } while (!line.empty() && line[0] == '%');

    auto dims = split_whitespace(line);
    if (dims.size() != 3) {
        throw ParseError(path, counter, "expected 'rows columns entries'");
    }
    const long long nrows = parse_index_or_throw(dims[0], path, counter);
    const long long ncols = parse_index_or_throw(dims[1], path, counter);
    const long long nnz = parse_index_or_throw(dims[2], path, counter);
    if (nrows < 0 || ncols < 0 || nnz < 0) {
        throw ParseError(path, counter, "negative dimensions");
    }

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(nnz);
    std::set<std::pair<long long, long long>> seen;
    while (next_line(input, line, counter)) {
        if (line.empty() || line[0] == '%') {
            continue;
        }
        auto fields = split_whitespace(line);
        if (fields.size() != 3) {
            throw ParseError(path, counter, "expected 'row column value'");
        }
        const long long r = parse_index_or_throw(fields[0], path, counter);
        const long long c = parse_index_or_throw(fields[1], path, counter);
        if (r < 1 || r > nrows || c < 1 || c > ncols) {
            throw ParseError(path, counter, "entry (" + fields[0] + ", " + fields[1] + ") outside the declared dimensions");
        }
        if (!seen.emplace(r, c).second) {
            throw ParseError(path, counter, "duplicate entry (" + fields[0] + ", " + fields[1] + ")");
        }
        const double value = parse_double_or_throw(fields[2], path, counter, "value");
        check_value(value, allow_negative, path, counter);
        if (value != 0) {
            triplets.emplace_back(r - 1, c - 1, value);
        }
    }
    if (static_cast<long long>(seen.size()) != nnz) {
        throw ParseError(path, counter, "declared " + std::to_string(nnz) + " entries, found " + std::to_string(seen.size()));
    }

    CountMatrix output;
    output.gene_ids = read_id_file(mtx_gene_ids_path(path));
    output.cell_ids = read_id_file(mtx_cell_ids_path(path));
    output.values.resize(nrows, ncols);
    output.values.setFromTriplets(triplets.begin(), triplets.end());
    output.values.makeCompressed();
    output.validate(allow_negative);
    return output;
}

const std::vector<std::string>& result_columns() {
    static const std::vector<std::string> columns{ "gene_id", "effect_pi", "statistic", "df", "p_value", "fdr_p", "is_de",
                                                   "method", "metric", "n_case_subjects", "n_control_subjects" };
    return columns;
}

std::map<std::string, size_t> header_index(const std::vector<std::string>& header, const std::vector<std::string>& required,
                                           const std::filesystem::path& path) {
    std::map<std::string, size_t> output;
    for (size_t i = 0; i < header.size(); ++i) {
        if (!output.emplace(header[i], i).second) {
            throw ParseError(path, 1, "duplicate column '" + header[i] + "'");
        }
    }
    for (const auto& r : required) {
        if (output.find(r) == output.end()) {
            throw ParseError(path, 1, "missing column '" + r + "'");
        }
    }
    return output;
}

}

MatrixFormat parse_matrix_format(std::string_view name) {
    if (name == "dense" || name == "tsv") {
        return MatrixFormat::DENSE_TSV;
    }
    if (name == "mtx" || name == "mm") {
        return MatrixFormat::MATRIX_MARKET;
    }
    throw std::invalid_argument("unknown matrix format '" + std::string(name) + "' (expected dense or mtx)");
}

std::filesystem::path mtx_gene_ids_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".genes");
}

std::filesystem::path mtx_cell_ids_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".cells");
}

CountMatrix read_counts(const std::filesystem::path& path, MatrixFormat format, bool allow_negative) {
    if (format == MatrixFormat::DENSE_TSV) {
        return read_dense(path, allow_negative);
    } else {
        return read_mtx(path, allow_negative);
    }
}

void write_counts(const std::filesystem::path& path, const CountMatrix& counts, MatrixFormat format) {
    auto output = open_output(path);
    if (format == MatrixFormat::DENSE_TSV) {
        output << "gene_id";
        for (const auto& c : counts.cell_ids) {
            output << '\t' << c;
        }
        output << '\n';
        for (Eigen::Index g = 0; g < counts.n_genes(); ++g) {
            output << counts.gene_ids[g];
            const Eigen::VectorXd row = counts.gene(g);
            for (auto x : row) {
                output << '\t' << full_precision(x);
            }
            output << '\n';
        }
    } else {
        output << "%%MatrixMarket matrix coordinate real general\n";
        output << counts.n_genes() << ' ' << counts.n_cells() << ' ' << counts.values.nonZeros() << '\n';
        for (Eigen::Index g = 0; g < counts.values.outerSize(); ++g) {
            for (std::remove_reference_t<decltype(counts.values)>::InnerIterator it(counts.values, g); it; ++it) {
                output << (g + 1) << ' ' << (it.col() + 1) << ' ' << full_precision(it.value()) << '\n';
            }
        }

        auto write_ids = [](const std::filesystem::path& p, const std::vector<std::string>& ids) -> void {
            auto out = open_output(p);
            for (const auto& id : ids) {
                out << id << '\n';
            }
            close_output(out, p);
        };
        write_ids(mtx_gene_ids_path(path), counts.gene_ids);
        write_ids(mtx_cell_ids_path(path), counts.cell_ids);
    }
    close_output(output, path);
}

StudyMetadata read_metadata(const std::filesystem::path& path) {
    auto input = open_input(path);
    std::string line;
    size_t counter = 0;
    if (!next_line(input, line, counter)) {
        throw ParseError(path, 1, "missing header");
    }
    auto header = split(line);
    if (header.size() < 3 || header[0] != "cell_id" || header[1] != "subject_id" || header[2] != "condition") {
        throw ParseError(path, counter, "header should start with cell_id, subject_id, condition");
    }

    StudyMetadata output;
    output.covariate_names.assign(header.begin() + 3, header.end());
    {
        std::set<std::string> names;
        for (const auto& n : output.covariate_names) {
            if (n.empty() || !names.insert(n).second) {
                throw ParseError(path, counter, "covariate names should be non-empty and unique");
            }
        }
    }
    const size_t p = output.covariate_names.size();

    while (next_line(input, line, counter)) {
        if (line.empty()) {
            throw ParseError(path, counter, "empty line");
        }
        auto fields = split(line);
        if (fields.size() != header.size()) {
            throw ParseError(path, counter, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        const auto& cell = fields[0];
        const auto& subject = fields[1];
        const auto& condition = fields[2];
        if (cell.empty() || subject.empty() || condition.empty()) {
            throw ParseError(path, counter, "empty cell, subject or condition");
        }
        if (!output.cell_to_subject.emplace(cell, subject).second) {
            throw ParseError(path, counter, "duplicate cell id '" + cell + "'");
        }

        auto cit = output.subject_to_condition.emplace(subject, condition);
        if (!cit.second && cit.first->second != condition) {
            throw ParseError(path, counter, "subject '" + subject + "' appears with conditions '" + cit.first->second + "' and '" + condition + "'");
        }

        std::vector<double> covariates(p);
        for (size_t k = 0; k < p; ++k) {
            const auto& token = fields[k + 3];
            if (token.empty() || token == "NA" || token == "NaN" || token == "nan") {
                throw ParseError(path, counter, "missing value for covariate '" + output.covariate_names[k] + "'");
            }
            covariates[k] = parse_double_or_throw(token, path, counter, "covariate '" + output.covariate_names[k] + "'");
            if (!std::isfinite(covariates[k])) {
                throw ParseError(path, counter, "non-finite value for covariate '" + output.covariate_names[k] + "'");
            }
        }
        auto vit = output.subject_covariates.emplace(subject, covariates);
        if (!vit.second && vit.first->second != covariates) {
            throw ParseError(path, counter, "subject '" + subject + "' has inconsistent covariate values");
        }
    }

    return output;
}

void write_metadata(const std::filesystem::path& path, const StudyMetadata& metadata, const std::vector<std::string>& cell_ids) {
    metadata.validate(cell_ids);
    auto output = open_output(path);
    output << "cell_id\tsubject_id\tcondition";
    for (const auto& n : metadata.covariate_names) {
        output << '\t' << n;
    }
    output << '\n';
    for (const auto& c : cell_ids) {
        const auto& subject = metadata.cell_to_subject.at(c);
        output << c << '\t' << subject << '\t' << metadata.subject_to_condition.at(subject);
        if (!metadata.covariate_names.empty()) {
            for (auto x : metadata.subject_covariates.at(subject)) {
                output << '\t' << full_precision(x);
            }
        }
        output << '\n';
    }
    close_output(output, path);
}

QcResult filter_qc(const CountMatrix& counts, const StudyMetadata& metadata, const QcOptions& options) {
    if (options.min_cells_per_subject < 0 || !(options.min_expr_fraction >= 0) || options.min_expr_fraction >= 1) {
        throw std::invalid_argument("QC thresholds should satisfy min_cells >= 0 and 0 <= min_fraction < 1");
    }
    metadata.validate(counts.cell_ids);

    QcResult output;
    const auto sizes = metadata.cluster_sizes(counts.cell_ids);
    std::set<std::string> kept_subjects;
    for (const auto& entry : sizes) {
        if (options.min_cells_per_subject == 0 || entry.second > options.min_cells_per_subject) {
            kept_subjects.insert(entry.first);
        } else {
            output.dropped_subjects.push_back(entry.first);
        }
    }
    if (kept_subjects.empty()) {
        throw std::invalid_argument("all subjects were removed by the cell-count filter");
    }

    std::vector<Eigen::Index> kept_cells;
    std::vector<char> in_scope;
    for (Eigen::Index c = 0; c < counts.n_cells(); ++c) {
        const auto& subject = metadata.cell_to_subject.at(counts.cell_ids[c]);
        if (kept_subjects.count(subject)) {
            kept_cells.push_back(c);
            in_scope.push_back(options.scope == ExpressionScope::ALL_CELLS || metadata.subject_to_condition.at(subject) == options.case_condition);
        }
    }

    const double scope_size = std::count(in_scope.begin(), in_scope.end(), 1);
    if (options.min_expr_fraction > 0 && scope_size == 0) {
        throw std::invalid_argument("no retained cells belong to the case condition '" + options.case_condition + "'");
    }

    std::vector<Eigen::Index> column_map(counts.n_cells(), -1);
    for (size_t k = 0; k < kept_cells.size(); ++k) {
        column_map[kept_cells[k]] = k;
    }

    std::vector<Eigen::Triplet<double>> triplets;
    for (Eigen::Index g = 0; g < counts.values.outerSize(); ++g) {
        double expressed = 0;
        std::vector<Eigen::Triplet<double>> row;
        for (std::remove_reference_t<decltype(counts.values)>::InnerIterator it(counts.values, g); it; ++it) {
            const auto col = column_map[it.col()];
            if (col < 0) {
                continue;
            }
            if (in_scope[col] && it.value() != 0) {
                ++expressed;
            }
            row.emplace_back(output.counts.gene_ids.size(), col, it.value());
        }

        if (options.min_expr_fraction > 0 && !(expressed / scope_size > options.min_expr_fraction)) {
            output.dropped_genes.push_back(counts.gene_ids[g]);
            continue;
        }
        output.counts.gene_ids.push_back(counts.gene_ids[g]);
        triplets.insert(triplets.end(), row.begin(), row.end());
    }

    for (auto c : kept_cells) {
        output.counts.cell_ids.push_back(counts.cell_ids[c]);
    }
    output.counts.values.resize(output.counts.gene_ids.size(), kept_cells.size());
    output.counts.values.setFromTriplets(triplets.begin(), triplets.end());
    output.counts.values.makeCompressed();

    output.metadata.covariate_names = metadata.covariate_names;
    for (const auto& c : output.counts.cell_ids) {
        output.metadata.cell_to_subject[c] = metadata.cell_to_subject.at(c);
    }
    for (const auto& s : kept_subjects) {
        output.metadata.subject_to_condition[s] = metadata.subject_to_condition.at(s);
        auto it = metadata.subject_covariates.find(s);
        if (it != metadata.subject_covariates.end()) {
            output.metadata.subject_covariates[s] = it->second;
        }
    }

    return output;
}

Eigen::MatrixXd clr_normalize(const CountMatrix& counts, double pseudocount) {
    if (!(pseudocount > 0) || !std::isfinite(pseudocount)) {
        throw std::invalid_argument("pseudocount should be positive");
    }
    Eigen::MatrixXd output = Eigen::MatrixXd(counts.values).array() + pseudocount;
    if ((output.array() <= 0).any()) {
        throw std::invalid_argument("counts should be non-negative");
    }
    output = output.array().log();
    if (output.rows()) {
        output.rowwise() -= output.colwise().mean();
    }
    return output;
}

std::string format_number(double x) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.6g", x);
    return buffer;
}

void write_results(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
    auto output = open_output(path);
    const auto& columns = result_columns();
    for (size_t i = 0; i < columns.size(); ++i) {
        output << (i ? "\t" : "") << columns[i];
    }
    output << '\n';

    auto probability = [](double p) -> std::string { return format_number(std::clamp(p, 0.0, 1.0)); };
    for (const auto& r : rows) {
        output << r.test.gene_id << '\t' << format_number(r.effect_pi) << '\t' << format_number(r.test.statistic) << '\t'
               << format_number(r.test.df) << '\t' << probability(r.test.p_value) << '\t' << probability(r.fdr_p) << '\t'
               << (r.is_de ? "true" : "false") << '\t' << r.test.method << '\t' << to_string(r.metric) << '\t' << r.test.n_case
               << '\t' << r.test.n_control << '\n';
    }
    close_output(output, path);
}

std::vector<ResultRow> read_results(const std::filesystem::path& path) {
    auto input = open_input(path);
    std::string line;
    size_t counter = 0;
    if (!next_line(input, line, counter) || split(line) != result_columns()) {
        throw ParseError(path, 1, "unexpected results header");
    }

    std::vector<ResultRow> output;
    while (next_line(input, line, counter)) {
        auto fields = split(line);
        if (fields.size() != result_columns().size()) {
            throw ParseError(path, counter, "expected " + std::to_string(result_columns().size()) + " fields");
        }
        ResultRow row;
        row.test.gene_id = fields[0];
        row.effect_pi = parse_double_or_throw(fields[1], path, counter, "effect_pi");
        row.test.statistic = parse_double_or_throw(fields[2], path, counter, "statistic");
        row.test.df = parse_double_or_throw(fields[3], path, counter, "df");
        row.test.p_value = parse_double_or_throw(fields[4], path, counter, "p_value");
        row.fdr_p = parse_double_or_throw(fields[5], path, counter, "fdr_p");
        if (fields[6] != "true" && fields[6] != "false") {
            throw ParseError(path, counter, "is_de should be true or false");
        }
        row.is_de = fields[6] == "true";
        row.test.method = fields[7];
        row.metric = parse_metric(fields[8]);
        row.test.n_case = parse_index_or_throw(fields[9], path, counter);
        row.test.n_control = parse_index_or_throw(fields[10], path, counter);
        output.push_back(std::move(row));
    }
    return output;
}

std::vector<ReferenceRow> read_parameter_table(const std::filesystem::path& path) {
    auto input = open_input(path);
    std::string line;
    size_t counter = 0;
    if (!next_line(input, line, counter)) {
        throw ParseError(path, 1, "missing header");
    }
    const auto header = split(line);
    const auto index = header_index(header, { "gene_id", "subject_id", "mu", "phi", "dropout", "sigma" }, path);

    std::vector<ReferenceRow> output;
    std::set<std::pair<std::string, std::string>> seen;
    while (next_line(input, line, counter)) {
        if (line.empty()) {
            continue;
        }
        auto fields = split(line);
        if (fields.size() != header.size()) {
            throw ParseError(path, counter, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        ReferenceRow row;
        row.gene_id = fields[index.at("gene_id")];
        row.subject_id = fields[index.at("subject_id")];
        if (!seen.emplace(row.gene_id, row.subject_id).second) {
            throw ParseError(path, counter, "duplicate gene/subject pair (" + row.gene_id + ", " + row.subject_id + ")");
        }
        row.params.mu = parse_double_or_throw(fields[index.at("mu")], path, counter, "mu");
        row.params.phi = parse_double_or_throw(fields[index.at("phi")], path, counter, "phi");
        row.params.dropout = parse_double_or_throw(fields[index.at("dropout")], path, counter, "dropout");
        row.params.sigma = parse_double_or_throw(fields[index.at("sigma")], path, counter, "sigma");
        try {
            row.params.validate();
        } catch (std::exception& e) {
            throw ParseError(path, counter, e.what());
        }
        output.push_back(std::move(row));
    }
    if (output.empty()) {
        throw ParseError(path, counter, "empty reference parameter table");
    }
    return output;
}

void write_parameter_table(const std::filesystem::path& path, const std::vector<ReferenceRow>& rows) {
    auto output = open_output(path);
    output << "gene_id\tsubject_id\tmu\tphi\tdropout\tsigma\n";
    for (const auto& r : rows) {
        output << r.gene_id << '\t' << r.subject_id << '\t' << full_precision(r.params.mu) << '\t' << full_precision(r.params.phi)
               << '\t' << full_precision(r.params.dropout) << '\t' << full_precision(r.params.sigma) << '\n';
    }
    close_output(output, path);
}

void write_truth(const std::filesystem::path& path, const std::vector<GeneTruth>& truth) {
    auto output = open_output(path);
    output << "gene_id\tis_de\tfold_change\n";
    for (const auto& t : truth) {
        output << t.gene_id << '\t' << (t.is_de ? "true" : "false") << '\t' << format_number(t.fold_change) << '\n';
    }
    close_output(output, path);
}

void write_config_sidecar(const std::filesystem::path& output, const std::vector<std::pair<std::string, std::string>>& entries) {
    const std::filesystem::path path(output.string() + ".config");
    auto out = open_output(path);
    for (const auto& e : entries) {
        out << e.first << '=' << e.second << '\n';
    }
    close_output(out, path);
}

}
